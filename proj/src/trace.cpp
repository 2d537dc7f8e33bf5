#include "qadam/trace.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "qadam/errors.hpp"

namespace qadam {

using nlohmann::json;

double RoundRecord::mean_delta_norm() const {
  if (workers.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& w : workers) acc += w.delta_norm;
  return acc / static_cast<double>(workers.size());
}

double RoundRecord::mean_err_norm() const {
  if (workers.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& w : workers) acc += w.err_norm;
  return acc / static_cast<double>(workers.size());
}

void summarize_rounds(Trace& trace) {
  auto& s = trace.summary;
  s.best_loss = std::numeric_limits<double>::infinity();
  s.mean_grad_norm_sq = 0.0;
  s.delta_g.reset();
  s.delta_x.reset();
  s.max_x_norm = 0.0;
  s.max_grad_sample_norm = 0.0;
  s.total_bits = trace.rounds.empty() ? 0 : trace.rounds.back().cum_bits;
  for (const auto& r : trace.rounds) {
    s.best_loss = std::min(s.best_loss, r.loss);
    s.mean_grad_norm_sq += r.grad_norm * r.grad_norm;
    s.max_x_norm = std::max(s.max_x_norm, r.x_norm);
    if (r.weight_contraction) s.delta_x = std::min(s.delta_x.value_or(1.0), *r.weight_contraction);
    for (const auto& w : r.workers) {
      if (w.contraction) s.delta_g = std::min(s.delta_g.value_or(1.0), *w.contraction);
      s.max_grad_sample_norm = std::max(s.max_grad_sample_norm, w.grad_norm);
    }
  }
  if (!trace.rounds.empty()) s.mean_grad_norm_sq /= static_cast<double>(trace.rounds.size());
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw FormatError("cannot format double");
  return std::string(buf, ptr);
}

double parse_double(const std::string& text) {
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw FormatError("bad number '" + text + "'");
  return v;
}

namespace {

const char* const kWorkerFields[] = {"delta_norm", "err_norm", "next_err_norm", "contraction", "grad_norm", "v_l1"};

std::uint64_t parse_u64(const std::string& text) {
  std::uint64_t v = 0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw FormatError("bad integer '" + text + "'");
  return v;
}

std::int64_t parse_i64(const std::string& text) {
  std::int64_t v = 0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw FormatError("bad integer '" + text + "'");
  return v;
}

std::string opt_text(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::optional<double> opt_parse(const std::string& text) {
  if (text.empty()) return std::nullopt;
  return parse_double(text);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> json_opt(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

void write_row(std::ostream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out << ',';
    out << cells[i];
  }
  out << '\n';
}

void write_tensor_row(std::ostream& out, std::uint64_t round, std::int64_t worker, const char* kind,
                      const Tensor& t) {
  out << round << ',' << worker << ',' << kind;
  for (double v : t) out << ',' << format_double(v);
  out << '\n';
}

json meta_to_json(const TraceMeta& m) {
  return json{{"problem", m.problem},
              {"dim", m.dim},
              {"workers", m.workers},
              {"steps", m.steps},
              {"alpha", m.h.alpha},
              {"beta", m.h.beta},
              {"theta", m.h.theta},
              {"eps", m.h.epsilon},
              {"schedule", describe(m.h.schedule)},
              {"kg", m.kg},
              {"kx", m.kx},
              {"ef", m.error_feedback},
              {"seed", m.seed},
              {"G", opt_json(m.bounds.G)},
              {"L", opt_json(m.bounds.L)},
              {"D", opt_json(m.bounds.D)},
              {"f_star", m.bounds.f_star},
              {"initial_loss", m.initial_loss}};
}

TraceMeta meta_from_json(const json& j) {
  TraceMeta m;
  m.problem = j.at("problem").get<std::string>();
  m.dim = j.at("dim").get<std::size_t>();
  m.workers = j.at("workers").get<std::size_t>();
  m.steps = j.at("steps").get<std::uint64_t>();
  m.h.alpha = j.at("alpha").get<double>();
  m.h.beta = j.at("beta").get<double>();
  m.h.theta = j.at("theta").get<double>();
  m.h.epsilon = j.at("eps").get<double>();
  m.h.schedule = parse_schedule(j.at("schedule").get<std::string>());
  m.kg = j.at("kg").get<std::string>();
  m.kx = j.at("kx").get<std::string>();
  m.error_feedback = j.at("ef").get<bool>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.bounds.G = json_opt(j, "G");
  m.bounds.L = json_opt(j, "L");
  m.bounds.D = json_opt(j, "D");
  m.bounds.f_star = j.at("f_star").get<double>();
  m.initial_loss = j.at("initial_loss").get<double>();
  return m;
}

json summary_to_json(const TraceSummary& s) {
  return json{{"final_loss", s.final_loss},
              {"final_grad_norm", s.final_grad_norm},
              {"final_loss_hat", s.final_loss_hat},
              {"final_grad_norm_hat", s.final_grad_norm_hat},
              {"best_loss", s.best_loss},
              {"mean_grad_norm_sq", s.mean_grad_norm_sq},
              {"delta_g", opt_json(s.delta_g)},
              {"delta_x", opt_json(s.delta_x)},
              {"max_x_norm", s.max_x_norm},
              {"max_grad_sample_norm", s.max_grad_sample_norm},
              {"total_bits", s.total_bits},
              {"wall_seconds", s.wall_seconds}};
}

TraceSummary summary_from_json(const json& j) {
  TraceSummary s;
  s.final_loss = j.at("final_loss").get<double>();
  s.final_grad_norm = j.at("final_grad_norm").get<double>();
  s.final_loss_hat = j.at("final_loss_hat").get<double>();
  s.final_grad_norm_hat = j.at("final_grad_norm_hat").get<double>();
  s.best_loss = j.at("best_loss").get<double>();
  s.mean_grad_norm_sq = j.at("mean_grad_norm_sq").get<double>();
  s.delta_g = json_opt(j, "delta_g");
  s.delta_x = json_opt(j, "delta_x");
  s.max_x_norm = j.at("max_x_norm").get<double>();
  s.max_grad_sample_norm = j.at("max_grad_sample_norm").get<double>();
  s.total_bits = j.at("total_bits").get<std::uint64_t>();
  s.wall_seconds = j.at("wall_seconds").get<double>();
  return s;
}

std::ofstream open_out(const std::filesystem::path& p) {
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
  }
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  return out;
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const std::string& suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

Snapshots read_snapshots(const std::filesystem::path& p, std::size_t workers, std::uint64_t steps) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  Snapshots s;
  s.rounds.resize(steps);
  for (auto& r : s.rounds) {
    r.m.resize(workers);
    r.v.resize(workers);
    r.e.resize(workers);
    r.delta.resize(workers);
  }
  s.final_e.resize(workers);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() < 3) throw FormatError("snapshot row too short");
    const std::uint64_t round = parse_u64(cells[0]);
    const std::int64_t worker = parse_i64(cells[1]);
    const std::string& kind = cells[2];
    std::vector<double> values;
    values.reserve(cells.size() - 3);
    for (std::size_t i = 3; i < cells.size(); ++i) values.push_back(parse_double(cells[i]));
    Tensor t(std::move(values));
    if (round == 0 || round > steps + 1) throw FormatError("snapshot round out of range");
    if (worker >= static_cast<std::int64_t>(workers) || worker < -1) throw FormatError("snapshot worker out of range");
    if (round == steps + 1) {
      if (kind == "x" && worker == -1) {
        s.final_x = std::move(t);
      } else if (kind == "e" && worker >= 0) {
        s.final_e[static_cast<std::size_t>(worker)] = std::move(t);
      } else {
        throw FormatError("unexpected final snapshot kind '" + kind + "'");
      }
      continue;
    }
    auto& r = s.rounds[round - 1];
    if (worker == -1) {
      if (kind == "x") {
        r.x = std::move(t);
      } else if (kind == "x_hat") {
        r.x_hat = std::move(t);
      } else {
        throw FormatError("unexpected server snapshot kind '" + kind + "'");
      }
      continue;
    }
    const auto w = static_cast<std::size_t>(worker);
    if (kind == "m") {
      r.m[w] = std::move(t);
    } else if (kind == "v") {
      r.v[w] = std::move(t);
    } else if (kind == "e") {
      r.e[w] = std::move(t);
    } else if (kind == "delta") {
      r.delta[w] = std::move(t);
    } else {
      throw FormatError("unexpected worker snapshot kind '" + kind + "'");
    }
  }
  return s;
}

}  // namespace

std::vector<std::string> trace_columns(std::size_t workers) {
  std::vector<std::string> cols = {"round",    "loss",        "grad_norm", "mean_delta_norm",
                                   "mean_err_norm", "cum_bits", "alpha_t",  "theta_t",
                                   "loss_x",   "grad_norm_x", "x_norm",    "weight_contraction",
                                   "bits"};
  for (std::size_t w = 0; w < workers; ++w) {
    for (const char* f : kWorkerFields) cols.push_back("w" + std::to_string(w) + "_" + f);
  }
  return cols;
}

void write_trace(const Trace& trace, const std::filesystem::path& stem) {
  const std::size_t workers = trace.meta.workers;
  {
    auto out = open_out(with_suffix(stem, ".csv"));
    write_row(out, trace_columns(workers));
    for (const auto& r : trace.rounds) {
      std::vector<std::string> cells = {std::to_string(r.round),
                                        format_double(r.loss),
                                        format_double(r.grad_norm),
                                        format_double(r.mean_delta_norm()),
                                        format_double(r.mean_err_norm()),
                                        std::to_string(r.cum_bits),
                                        format_double(r.alpha_t),
                                        format_double(r.theta_t),
                                        format_double(r.loss_x),
                                        format_double(r.grad_norm_x),
                                        format_double(r.x_norm),
                                        opt_text(r.weight_contraction),
                                        std::to_string(r.bits)};
      for (const auto& w : r.workers) {
        cells.push_back(format_double(w.delta_norm));
        cells.push_back(format_double(w.err_norm));
        cells.push_back(format_double(w.next_err_norm));
        cells.push_back(opt_text(w.contraction));
        cells.push_back(format_double(w.grad_norm));
        cells.push_back(format_double(w.v_l1));
      }
      write_row(out, cells);
    }
    if (!out) throw IoError("failed writing trace CSV");
  }
  {
    json j{{"meta", meta_to_json(trace.meta)}, {"summary", summary_to_json(trace.summary)}};
    j["config"] = json::object();
    for (const auto& [k, v] : trace.config) j["config"][k] = v;
    j["snapshots"] = trace.snapshots.has_value();
    auto out = open_out(with_suffix(stem, ".json"));
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing trace JSON");
  }
  if (trace.snapshots) {
    const auto& s = *trace.snapshots;
    auto out = open_out(with_suffix(stem, ".snapshots.csv"));
    out << "round,worker,kind";
    for (std::size_t i = 0; i < trace.meta.dim; ++i) out << ",c" << i;
    out << '\n';
    for (std::size_t t = 0; t < s.rounds.size(); ++t) {
      const auto& r = s.rounds[t];
      const std::uint64_t round = t + 1;
      write_tensor_row(out, round, -1, "x", r.x);
      write_tensor_row(out, round, -1, "x_hat", r.x_hat);
      for (std::size_t w = 0; w < r.m.size(); ++w) {
        const auto wi = static_cast<std::int64_t>(w);
        write_tensor_row(out, round, wi, "m", r.m[w]);
        write_tensor_row(out, round, wi, "v", r.v[w]);
        write_tensor_row(out, round, wi, "e", r.e[w]);
        write_tensor_row(out, round, wi, "delta", r.delta[w]);
      }
    }
    const std::uint64_t last = s.rounds.size() + 1;
    write_tensor_row(out, last, -1, "x", s.final_x);
    for (std::size_t w = 0; w < s.final_e.size(); ++w) {
      write_tensor_row(out, last, static_cast<std::int64_t>(w), "e", s.final_e[w]);
    }
    if (!out) throw IoError("failed writing snapshots");
  }
}

Trace read_trace(const std::filesystem::path& stem) {
  Trace trace;
  const auto json_path = with_suffix(stem, ".json");
  std::ifstream jin(json_path);
  if (!jin) throw IoError("cannot read " + json_path.string());
  json j;
  try {
    jin >> j;
    trace.meta = meta_from_json(j.at("meta"));
    trace.summary = summary_from_json(j.at("summary"));
    for (const auto& [k, v] : j.at("config").items()) trace.config[k] = v.get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(json_path.string() + ": " + e.what());
  }

  const auto csv_path = with_suffix(stem, ".csv");
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot read " + csv_path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(csv_path.string() + ": empty");
  const auto header = split(line);
  const auto expected = trace_columns(trace.meta.workers);
  if (header != expected) throw FormatError(csv_path.string() + ": unexpected header");
  constexpr std::size_t kFixed = 13;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split(line);
    if (c.size() != expected.size()) throw FormatError(csv_path.string() + ": wrong column count");
    RoundRecord r;
    r.round = parse_u64(c[0]);
    r.loss = parse_double(c[1]);
    r.grad_norm = parse_double(c[2]);
    r.cum_bits = parse_u64(c[5]);
    r.alpha_t = parse_double(c[6]);
    r.theta_t = parse_double(c[7]);
    r.loss_x = parse_double(c[8]);
    r.grad_norm_x = parse_double(c[9]);
    r.x_norm = parse_double(c[10]);
    r.weight_contraction = opt_parse(c[11]);
    r.bits = parse_u64(c[12]);
    for (std::size_t w = 0; w < trace.meta.workers; ++w) {
      const std::size_t b = kFixed + 6 * w;
      WorkerRecord wr;
      wr.delta_norm = parse_double(c[b]);
      wr.err_norm = parse_double(c[b + 1]);
      wr.next_err_norm = parse_double(c[b + 2]);
      wr.contraction = opt_parse(c[b + 3]);
      wr.grad_norm = parse_double(c[b + 4]);
      wr.v_l1 = parse_double(c[b + 5]);
      r.workers.push_back(wr);
    }
    trace.rounds.push_back(std::move(r));
  }
  for (std::size_t i = 0; i < trace.rounds.size(); ++i) {
    if (trace.rounds[i].round != i + 1) throw FormatError(csv_path.string() + ": round index not consecutive");
  }

  const auto snap_path = with_suffix(stem, ".snapshots.csv");
  if (std::filesystem::exists(snap_path)) {
    trace.snapshots = read_snapshots(snap_path, trace.meta.workers, trace.rounds.size());
  }
  return trace;
}

}  // namespace qadam
