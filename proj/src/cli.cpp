#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qadam/errors.hpp"
#include "qadam/harness.hpp"

namespace qadam {

namespace {

bool is_switch(const std::string& key) { return key == "ef" || key == "snapshots" || key == "parallel"; }

const char* help_for(const std::string& key) {
  static const std::map<std::string, const char*> help = {
      {"problem", "quadratic | logistic | mlp"},
      {"dim", "model dimension (input width for mlp)"},
      {"workers", "number of workers N"},
      {"steps", "number of rounds T"},
      {"kg", "gradient quantizer: fp, ternary or bit width 2..32"},
      {"kx", "weight quantizer: fp, ternary or bit width 2..32"},
      {"ef", "error feedback on|off"},
      {"alpha", "base step size"},
      {"beta", "first-moment decay"},
      {"theta", "second-moment schedule parameter"},
      {"eps", "epsilon under the square root"},
      {"schedule", "decay | fixed:<T> | halving:<period>"},
      {"seed", "base seed for worker gradient streams"},
      {"snapshots", "record full m, v, e, x vectors (dim*steps*workers <= 4e6)"},
      {"out", "output stem for <stem>.csv / .json"},
      {"parallel", "run workers on separate threads"},
      {"message-log", "directory receiving one wire frame per message"},
      {"kappa", "quadratic condition number"},
      {"noise", "quadratic per-coordinate noise values (zero mean)"},
      {"radius", "quadratic radius for the declared gradient bound"},
      {"data-seed", "seed for problem data"},
      {"samples", "number of samples (logistic, mlp)"},
      {"batch", "minibatch size (logistic, mlp)"},
      {"label-noise", "label flip probability for synthetic logistic data"},
      {"feature-spread", "largest/smallest feature scale for synthetic logistic data"},
      {"dataset", "CSV dataset for logistic (header row, label last)"},
      {"hidden", "mlp hidden widths, comma separated"},
      {"activation", "mlp activation: tanh | sigmoid | softplus"},
  };
  return help.at(key);
}

struct RunFlags {
  std::map<std::string, std::vector<std::string>> values;
  std::string config_file;
  CLI::App* app = nullptr;

  void attach(CLI::App* sub) {
    app = sub;
    for (const auto& key : config_keys()) {
      auto* opt = sub->add_option("--" + key, values[key], help_for(key));
      if (is_switch(key)) {
        opt->expected(0, 1);
      } else {
        opt->expected(1);
      }
    }
    sub->add_option("--config", config_file, "key = value config file; flags override it");
  }

  ConfigMap merged() const {
    ConfigMap m = config_file.empty() ? ConfigMap{} : read_config_file(config_file);
    for (const auto& key : config_keys()) {
      if (app->count("--" + key) == 0) continue;
      const auto& v = values.at(key);
      m[key] = v.empty() || v.back().empty() ? std::string("on") : v.back();
    }
    return m;
  }
};

std::filesystem::path trace_stem(const std::string& arg) {
  for (const std::string suffix : {".snapshots.csv", ".csv", ".json"}) {
    if (arg.size() > suffix.size() && arg.compare(arg.size() - suffix.size(), suffix.size(), suffix) == 0) {
      return arg.substr(0, arg.size() - suffix.size());
    }
  }
  return arg;
}

void print_summary(std::ostream& out, const std::string& label, const Trace& t) {
  const auto& s = t.summary;
  out << label << ": final_loss=" << format_double(s.final_loss)
      << " final_grad_norm=" << format_double(s.final_grad_norm)
      << " final_grad_norm_hat=" << format_double(s.final_grad_norm_hat) << " total_bits=" << s.total_bits;
  if (s.delta_g) out << " delta_g=" << format_double(*s.delta_g);
  if (s.delta_x) out << " delta_x=" << format_double(*s.delta_x);
  out << '\n';
}

int do_verify(const std::vector<std::string>& traces, const std::string& report_path,
              std::optional<double> theta_prime, std::ostream& out) {
  bool failed = false;
  std::string combined;
  for (const auto& arg : traces) {
    const auto stem = trace_stem(arg);
    const Trace trace = read_trace(stem);
    ProblemPtr problem;
    try {
      problem = make_problem(apply_config(trace.config).problem);
    } catch (const Error&) {
      problem = nullptr;  // second-moment check becomes not-applicable
    }
    VerifyOptions options;
    options.theta_prime = theta_prime;
    const auto reports = verify_trace(trace, problem.get(), options);
    failed = failed || any_failed(reports);
    const std::string text = format_report(reports);
    out << "# " << stem.string() << '\n' << text;
    if (report_path.empty()) {
      write_report(reports, stem.string() + ".report.txt");
    } else {
      combined += "# " + stem.string() + '\n' + text;
    }
  }
  if (!report_path.empty()) {
    std::ofstream f(report_path);
    if (!f) throw IoError("cannot write report " + report_path);
    f << combined;
  }
  return failed ? kExitVerify : kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Simulator for Adam with quantized gradients, quantized weights and error feedback"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run one configuration and write <out>.csv / <out>.json");
  RunFlags run_flags;
  run_flags.attach(run);

  auto* sweep = app.add_subcommand("sweep", "run one configuration per value of an axis");
  RunFlags sweep_flags;
  sweep_flags.attach(sweep);
  std::string axis;
  std::string values;
  bool ef_both = false;
  sweep->add_option("--axis", axis, "kg | kx | alpha")->required();
  sweep->add_option("--values", values, "comma-separated values")->required();
  sweep->add_flag("--ef-both", ef_both, "run every value with and without error feedback");

  auto* verify = app.add_subcommand("verify", "check recorded traces against the analysis");
  std::vector<std::string> traces;
  std::string report_path;
  std::optional<double> theta_prime;
  verify->add_option("traces", traces, "trace stems or their .csv/.json files")->required();
  verify->add_option("--report", report_path, "write all reports to this file");
  verify->add_option("--theta-prime", theta_prime, "theta' for the analysis constants");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (run->parsed()) {
      RunConfig c = apply_config(run_flags.merged());
      if (!c.out) c.out = default_output_stem("run");
      const Trace t = run_experiment(c);
      print_summary(out, c.out->string(), t);
      return kExitOk;
    }
    if (sweep->parsed()) {
      RunConfig c = apply_config(sweep_flags.merged());
      std::vector<std::string> list;
      std::stringstream ss(values);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (!item.empty()) list.push_back(item);
      }
      const auto entries = run_sweep(c, parse_sweep_axis(axis), list, ef_both);
      for (const auto& e : entries) {
        out << axis << '=' << e.value << (ef_both ? (e.ef ? " ef=on" : " ef=off") : "")
            << ": final_loss=" << format_double(e.summary.final_loss)
            << " final_grad_norm=" << format_double(e.summary.final_grad_norm)
            << " final_grad_norm_hat=" << format_double(e.summary.final_grad_norm_hat)
            << " total_bits=" << e.summary.total_bits << '\n';
      }
      return kExitOk;
    }
    return do_verify(traces, report_path, theta_prime, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kExitIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace qadam
