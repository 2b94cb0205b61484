#pragma once

// Command-line front end. `run` holds the whole program so tests can drive it
// with in-memory streams.
//
// Exit codes: 0 success, 1 I/O or unexpected failure, 2 usage, 3 numerical
// non-convergence, 4 fit failure.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kitaev_bures/kitaev_bures.hpp"

namespace kitaev_bures::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNonConvergence = 3;
inline constexpr int kExitFitFailure = 4;
inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kThreadsEnv = "KITAEV_BURES_THREADS";

using Json = nlohmann::ordered_json;

inline std::string fmt17(double x) {
  if (std::isnan(x)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

/// Real number or a fraction "p/q".
inline double parse_real(const std::string& text, const std::string& what) {
  const std::string s = trim(text);
  auto number = [&](const std::string& t) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(t, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != t.size() || !std::isfinite(v))
      throw InvalidArgument(what + ": cannot parse '" + text + "' as a number");
    return v;
  };
  const auto slash = s.find('/');
  if (slash == std::string::npos) return number(s);
  const double den = number(trim(s.substr(slash + 1)));
  if (den == 0.0) throw InvalidArgument(what + ": zero denominator in '" + text + "'");
  return number(trim(s.substr(0, slash))) / den;
}

inline Couplings parse_triple(const std::string& text, const std::string& what) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ',');) parts.push_back(p);
  if (parts.size() != 3) throw InvalidArgument(what + ": expected jx,jy,jz but got '" + text + "'");
  return {parse_real(parts[0], what), parse_real(parts[1], what), parse_real(parts[2], what)};
}

inline std::string element_name(int a, int b) {
  return std::string(to_string(kParams[a])) + std::string(to_string(kParams[b]));
}

/// The ten independent pairs, upper triangle in row order.
inline std::vector<std::pair<int, int>> all_elements() {
  std::vector<std::pair<int, int>> out;
  for (const auto& p : detail::kClassicalPairs) out.emplace_back(p[0], p[1]);
  return out;
}

inline std::pair<int, int> parse_element(const std::string& text) {
  const std::string s = trim(text);
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      if (element_name(a, b) == s) return {std::min(a, b), std::max(a, b)};
  throw InvalidArgument("unknown element '" + text + "' (expected e.g. BetaBeta, JxJz, JzJz)");
}

enum class Format { Json, Csv };

struct OutputTarget {
  Format format = Format::Json;
  std::string path;  // empty: stdout
};

inline OutputTarget resolve_output(const std::string& out, Format stdout_format) {
  if (out.empty()) return {stdout_format, {}};
  if (out == "-") return {Format::Csv, {}};
  const auto ext = std::filesystem::path(out).extension().string();
  if (ext == ".csv") return {Format::Csv, out};
  if (ext == ".json") return {Format::Json, out};
  throw InvalidArgument("--out: unsupported extension '" + ext + "' (use .csv, .json or -)");
}

inline void write_text(const std::string& path, const std::string& content, std::ostream& out) {
  if (path.empty()) {
    out << content;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << content;
  if (!f) throw std::runtime_error("failed writing '" + path + "'");
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

inline Json matrix_json(const Eigen::Matrix4d& m) {
  Json rows = Json::array();
  for (int a = 0; a < 4; ++a) {
    Json row = Json::array();
    for (int b = 0; b < 4; ++b) row.push_back(m(a, b));
    rows.push_back(row);
  }
  return rows;
}

inline Json couplings_json(const Couplings& j) { return {{"jx", j.jx}, {"jy", j.jy}, {"jz", j.jz}}; }

inline Json grid_json(const GridSpec& g) {
  return {{"base_n", g.base_n},
          {"refine_levels", g.refine_levels},
          {"patch_radius", g.patch_radius},
          {"grading_floor", g.grading_floor},
          {"target_rel_tol", g.target_rel_tol}};
}

inline std::string phase_line(const Couplings& j) {
  const PhaseRegion r = classify_phase(j);
  std::string line(to_string(r));
  char buf[96];
  if (is_gapped(r)) {
    std::snprintf(buf, sizeof buf, " gap=%.12g", fermion_gap(j));
    line += buf;
  } else if (r == PhaseRegion::GaplessB) {
    const auto pts = dirac_points(j);
    if (!pts.empty()) {
      line += " dirac=";
      for (std::size_t i = 0; i < pts.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%s(%.12g,%.12g)", i ? ";" : "", pts[i].px(), pts[i].py());
        line += buf;
      }
    }
  }
  return line;
}

// Options shared by every computing subcommand.
struct Common {
  int threads = -1;
  std::string out;
  std::string config;
  GridSpec grid;
};

inline void add_common(CLI::App* sub, Common& c, bool with_grid) {
  sub->add_option("--threads", c.threads, "worker threads (0 = all cores; default from " +
                                              std::string(kThreadsEnv) + ")");
  sub->add_option("--config", c.config, "key = value file; command-line flags take precedence");
  if (with_grid) {
    sub->add_option("--out", c.out, "output path (.csv or .json), '-' for CSV on stdout");
    sub->add_option("--grid-n", c.grid.base_n, "trapezoid points per axis")->capture_default_str();
    sub->add_option("--refine-levels", c.grid.refine_levels, "refinement depth")->capture_default_str();
    sub->add_option("--tol", c.grid.target_rel_tol, "target relative error")->capture_default_str();
  }
}

inline unsigned resolve_cli_threads(int requested) {
  if (requested >= 0) return static_cast<unsigned>(requested);
  if (const char* env = std::getenv(kThreadsEnv)) {
    const double v = parse_real(env, kThreadsEnv);
    if (v < 0 || v != std::floor(v)) throw InvalidArgument(std::string(kThreadsEnv) + " must be a non-negative integer");
    return static_cast<unsigned>(v);
  }
  return 0;
}

/// Reads `key = value` lines and returns the command-line tokens they stand
/// for. Keys given on the command line are skipped so that flags win.
inline std::vector<std::string> config_tokens(const std::string& path, const CLI::App& sub,
                                              const std::set<std::string>& given) {
  std::ifstream f(path);
  if (!f) throw InvalidArgument("--config: cannot read '" + path + "'");
  std::vector<std::string> tokens;
  std::string line;
  int number = 0;
  while (std::getline(f, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument("--config: line " + std::to_string(number) + " is not key = value");
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    std::replace(key.begin(), key.end(), '_', '-');
    const CLI::Option* opt = key == "config" || key == "help" ? nullptr : sub.get_option_no_throw("--" + key);
    if (opt == nullptr) throw InvalidArgument("--config: unknown key '" + key + "'");
    if (given.count("--" + key)) continue;
    if (opt->get_type_size_max() == 0) {
      if (value == "true" || value == "1") tokens.push_back("--" + key);
      else if (value != "false" && value != "0")
        throw InvalidArgument("--config: key '" + key + "' expects true or false");
      continue;
    }
    tokens.push_back("--" + key);
    std::stringstream ss(value);
    for (std::string v; ss >> v;) tokens.push_back(v);
  }
  return tokens;
}

struct TensorArgs {
  std::string jx, jy, jz;
  double temp = 0.0;
  int size = 0;
};

struct SweepArgs {
  std::vector<std::string> path;
  int steps = 0;
  std::vector<double> temps;
  int size = 0;
  std::vector<std::string> elements;
};

struct ScalingArgs {
  std::string jx, jy, jz;
  double tmin = 1e-4, tmax = 1e-2;
  int points = 10;
  std::string element;
  std::string model = "auto";
};

struct RatioArgs {
  double jz_min = 0.48, jz_max = 0.52, t_min = 0.002, t_max = 0.05;
  std::string res = "16x16";
  double contour = 0.0;
  bool synthetic = false;
};

inline BuresTensor compute_tensor(const ThermoPoint& tp, int size, const GridSpec& grid, unsigned threads) {
  if (size > 0) return tensor_finite(tp, size, threads);
  return tensor_thermodynamic(tp, grid, threads);
}

inline void require_size(const CLI::Option* opt, int size) {
  if (opt->count() && (size < 3 || size % 2 == 0))
    throw InvalidArgument("--size: L must be odd and >= 3 (got " + std::to_string(size) + ")");
}

inline int cmd_tensor(const TensorArgs& a, const Common& c, const CLI::Option* size_opt, std::ostream& out) {
  const Couplings j(parse_real(a.jx, "--jx"), parse_real(a.jy, "--jy"), parse_real(a.jz, "--jz"));
  if (!(a.temp >= 0.0)) throw InvalidArgument("--temp must be non-negative");
  require_size(size_opt, a.size);
  c.grid.validate();
  const auto target = resolve_output(c.out, Format::Json);
  const unsigned threads = resolve_cli_threads(c.threads);

  const ThermoPoint tp = ThermoPoint::at_temperature(j, a.temp);
  const BuresTensor t = compute_tensor(tp, size_opt->count() ? a.size : 0, c.grid, threads);
  const PhaseRegion region = classify_phase(j);

  if (target.format == Format::Csv) {
    std::string s = "row,col,classical,nonclassical,classical_error,nonclassical_error\n";
    for (int r = 0; r < 4; ++r)
      for (int q = 0; q < 4; ++q)
        s += std::string(to_string(kParams[r])) + "," + std::string(to_string(kParams[q])) + "," +
             fmt17(t.classical(r, q)) + "," + fmt17(t.nonclassical(r, q)) + "," +
             fmt17(t.evaluation.classical_error(r, q)) + "," + fmt17(t.evaluation.nonclassical_error(r, q)) + "\n";
    write_text(target.path, s, out);
    return kExitOk;
  }
  Json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["command"] = "tensor";
  doc["parameters"] = {"beta", "jx", "jy", "jz"};
  doc["couplings"] = couplings_json(j);
  doc["temperature"] = a.temp;
  doc["beta"] = tp.zero_temperature ? Json(nullptr) : Json(tp.beta);
  doc["phase"] = std::string(to_string(region));
  if (region != PhaseRegion::GaplessB) doc["gap"] = fermion_gap(j);
  doc["classical"] = matrix_json(t.classical);
  doc["nonclassical"] = matrix_json(t.nonclassical);
  doc["total"] = matrix_json(t.total());
  Json ev;
  ev["method"] = t.evaluation.method;
  if (t.evaluation.method == "finite") {
    ev["size"] = t.evaluation.size;
  } else {
    ev["grid"] = grid_json(t.evaluation.grid);
    ev["refinement_sites"] = t.evaluation.refinement_sites;
    ev["classical_error"] = matrix_json(t.evaluation.classical_error);
    ev["nonclassical_error"] = matrix_json(t.evaluation.nonclassical_error);
  }
  ev["evaluations"] = t.evaluation.evaluations;
  doc["evaluation"] = ev;
  write_text(target.path, dump(doc), out);
  return kExitOk;
}

inline int cmd_phase(const TensorArgs& a, std::ostream& out) {
  const Couplings j(parse_real(a.jx, "--jx"), parse_real(a.jy, "--jy"), parse_real(a.jz, "--jz"));
  out << phase_line(j) << "\n";
  return kExitOk;
}

inline int cmd_sweep(const SweepArgs& a, const Common& c, const CLI::Option* size_opt, std::ostream& out) {
  std::optional<Couplings> start, end;
  for (const auto& tok : a.path) {
    const auto eq = tok.find('=');
    const std::string key = eq == std::string::npos ? "" : tok.substr(0, eq);
    if (key == "start") start = parse_triple(tok.substr(eq + 1), "--path start");
    else if (key == "end") end = parse_triple(tok.substr(eq + 1), "--path end");
    else throw InvalidArgument("--path: expected start=jx,jy,jz end=jx,jy,jz");
  }
  if (!start || !end) throw InvalidArgument("--path: both start= and end= are required");
  if (a.steps < 1) throw InvalidArgument("--steps must be at least 1");
  for (double t : a.temps)
    if (!(t >= 0.0) || !std::isfinite(t)) throw InvalidArgument("--temp values must be non-negative");
  require_size(size_opt, a.size);
  c.grid.validate();
  std::vector<std::pair<int, int>> elements;
  if (a.elements.empty()) elements = all_elements();
  for (const auto& e : a.elements) elements.push_back(parse_element(e));
  const auto target = resolve_output(c.out, Format::Csv);
  const unsigned threads = resolve_cli_threads(c.threads);
  const int size = size_opt->count() ? a.size : 0;

  std::string csv = "param,jx,jy,jz,temp,element,classical,nonclassical\n";
  Json rows = Json::array();
  for (double temp : a.temps) {
    for (int k = 0; k < a.steps; ++k) {
      const double s = a.steps == 1 ? 0.0 : static_cast<double>(k) / (a.steps - 1);
      const Couplings j(start->jx + s * (end->jx - start->jx), start->jy + s * (end->jy - start->jy),
                        start->jz + s * (end->jz - start->jz));
      const BuresTensor t = compute_tensor(ThermoPoint::at_temperature(j, temp), size, c.grid, threads);
      for (const auto& [r, q] : elements) {
        const std::string name = element_name(r, q);
        csv += fmt17(s) + "," + fmt17(j.jx) + "," + fmt17(j.jy) + "," + fmt17(j.jz) + "," + fmt17(temp) + "," +
               name + "," + fmt17(t.classical(r, q)) + "," + fmt17(t.nonclassical(r, q)) + "\n";
        rows.push_back({{"param", s}, {"jx", j.jx}, {"jy", j.jy}, {"jz", j.jz}, {"temp", temp},
                        {"element", name}, {"classical", t.classical(r, q)},
                        {"nonclassical", t.nonclassical(r, q)}});
      }
    }
  }
  if (target.format == Format::Csv) {
    write_text(target.path, csv, out);
  } else {
    Json doc;
    doc["schema_version"] = kSchemaVersion;
    doc["command"] = "sweep";
    doc["parameters"] = {"beta", "jx", "jy", "jz"};
    doc["method"] = size > 0 ? "finite" : "thermodynamic";
    if (size > 0) doc["size"] = size;
    doc["rows"] = rows;
    write_text(target.path, dump(doc), out);
  }
  return kExitOk;
}

inline Json fit_json(const ScalingFitResult& f) {
  Json p;
  if (const auto* m = std::get_if<GappedClassicalFit>(&f.model)) {
    p = {{"alpha", m->alpha}, {"gap", m->gap}, {"log_prefactor", m->log_prefactor}};
    if (m->constrained_alpha) {
      p["constrained_alpha"] = *m->constrained_alpha;
      p["constrained_log_prefactor"] = *m->constrained_log_prefactor;
      p["outside_quasiclassical_window"] = m->outside_quasiclassical_window;
    }
  } else if (const auto* m = std::get_if<GappedNonclassicalFit>(&f.model)) {
    p = {{"gap", m->gap}, {"exponent", m->exponent}, {"log_prefactor", m->log_prefactor}, {"offset", m->offset}};
  } else if (const auto* m = std::get_if<LogDivergenceFit>(&f.model)) {
    p = {{"a", m->a}, {"b", m->b}};
  } else if (const auto* m = std::get_if<PowerLawFit>(&f.model)) {
    p = {{"exponent", m->exponent}, {"prefactor", m->prefactor}};
  }
  return {{"model", std::string(f.model_name())}, {"parameters", p}, {"r_squared", f.r_squared},
          {"residuals", f.residuals}};
}

inline int cmd_scaling(const ScalingArgs& a, const Common& c, std::ostream& out) {
  const Couplings j(parse_real(a.jx, "--jx"), parse_real(a.jy, "--jy"), parse_real(a.jz, "--jz"));
  if (!(a.tmin > 0.0) || !(a.tmax > a.tmin)) throw InvalidArgument("--tmin/--tmax: need 0 < tmin < tmax");
  if (a.points < static_cast<int>(kMinFitSamples))
    throw InvalidArgument("--points must be at least " + std::to_string(kMinFitSamples));
  const auto colon = a.element.find(':');
  const std::string part = colon == std::string::npos ? "" : a.element.substr(0, colon);
  if (part != "c" && part != "nc") throw InvalidArgument("--element: expected c:<pair> or nc:<pair>");
  const bool classical = part == "c";
  const auto [r, q] = parse_element(a.element.substr(colon + 1));
  if (!classical && r == 0) throw InvalidArgument("--element: the nonclassical beta row vanishes identically");
  c.grid.validate();
  const auto target = resolve_output(c.out, Format::Json);
  const unsigned threads = resolve_cli_threads(c.threads);

  const PhaseRegion region = classify_phase(j);
  std::string model = a.model;
  if (model == "auto") {
    if (is_gapped(region)) model = classical ? "gapped-c" : "gapped-nc";
    else model = region == PhaseRegion::GaplessB ? "log" : "power";
  }
  if (model == "gapped-nc" && (!is_gapped(region) || classical))
    throw InvalidArgument("--model gapped-nc needs a nonclassical element at a gapped point");

  std::vector<Sample> samples;
  double offset = 0.0;
  if (model == "gapped-nc") {
    offset = tensor_thermodynamic(ThermoPoint::at_temperature(j, 0.0), c.grid, threads).nonclassical(r, q);
    for (double t : log_spaced(a.tmin, a.tmax, static_cast<std::size_t>(a.points)))
      samples.push_back({t, nonclassical_thermal_deficit(ThermoPoint::at_temperature(j, t), c.grid, threads)(r, q)});
  } else {
    for (double t : log_spaced(a.tmin, a.tmax, static_cast<std::size_t>(a.points))) {
      const auto g = tensor_thermodynamic(ThermoPoint::at_temperature(j, t), c.grid, threads);
      samples.push_back({t, classical ? g.classical(r, q) : g.nonclassical(r, q)});
    }
  }

  // Multiplicative models fit the magnitude of a fixed-sign element.
  double sign = 1.0;
  std::vector<Sample> fitted = samples;
  if (model == "gapped-c" || model == "power") {
    if (std::all_of(samples.begin(), samples.end(), [](const Sample& s) { return s.g < 0.0; })) {
      sign = -1.0;
      for (auto& s : fitted) s.g = -s.g;
    }
  }
  ScalingFitResult fit;
  if (model == "gapped-c") {
    std::optional<double> gap;
    if (is_gapped(region)) gap = fermion_gap(j);
    fit = fit_gapped_classical(fitted, gap);
  } else if (model == "gapped-nc") {
    fit = fit_gapped_nonclassical(fitted, fermion_gap(j), offset);
  } else if (model == "log") {
    fit = fit_log_divergence(fitted);
  } else {
    fit = fit_power_law(fitted);
  }

  if (target.format == Format::Csv) {
    std::string s = model == "gapped-nc" ? "temp,excess,residual\n" : "temp,value,residual\n";
    for (std::size_t i = 0; i < samples.size(); ++i)
      s += fmt17(samples[i].t) + "," + fmt17(samples[i].g) + "," + fmt17(fit.residuals[i]) + "\n";
    write_text(target.path, s, out);
    return kExitOk;
  }
  Json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["command"] = "scaling";
  doc["couplings"] = couplings_json(j);
  doc["phase"] = std::string(to_string(region));
  if (region != PhaseRegion::GaplessB) doc["gap"] = fermion_gap(j);
  doc["element"] = a.element;
  doc["quantity"] = model == "gapped-nc" ? "nonclassical(T) - nonclassical(0)" : "value";
  doc["sign"] = sign;
  Json js = Json::array();
  for (const auto& s : samples) js.push_back({{"temp", s.t}, {"value", s.g}});
  doc["samples"] = js;
  doc["fit"] = fit_json(fit);
  write_text(target.path, dump(doc), out);
  return kExitOk;
}

inline std::pair<std::size_t, std::size_t> parse_resolution(const std::string& res) {
  const auto x = res.find_first_of("xX");
  if (x == std::string::npos) throw InvalidArgument("--res: expected NxM");
  const double n = parse_real(res.substr(0, x), "--res"), m = parse_real(res.substr(x + 1), "--res");
  if (n != std::floor(n) || m != std::floor(m) || n < 1 || m < 1)
    throw InvalidArgument("--res: expected positive integers NxM");
  return {static_cast<std::size_t>(n), static_cast<std::size_t>(m)};
}

inline Json exponent_json(const std::optional<ContourExponent>& e) {
  if (!e) return nullptr;
  return {{"exponent", e->exponent}, {"prefactor", e->prefactor}, {"r_squared", e->r_squared}, {"points", e->points}};
}

inline int cmd_ratio_map(const RatioArgs& a, const Common& c, const CLI::Option* contour_opt, std::ostream& out,
                         std::ostream& err) {
  RatioMapSpec spec;
  spec.s_min = a.jz_min;
  spec.s_max = a.jz_max;
  spec.t_min = a.t_min;
  spec.t_max = a.t_max;
  std::tie(spec.n1, spec.n2) = parse_resolution(a.res);
  spec.validate();
  c.grid.validate();
  const bool want_contour = contour_opt->count() > 0;
  if (want_contour && !(a.contour > 0.0)) throw InvalidArgument("--contour level must be positive");
  const auto target = resolve_output(c.out, Format::Csv);
  if (want_contour && target.path.empty()) throw InvalidArgument("--contour needs --out <file>.csv or .json");
  const unsigned threads = resolve_cli_threads(c.threads);

  const RatioMap map = a.synthetic ? synthetic_ratio_map(spec, [](double jz, double t) {
                                       const double r = std::abs(jz - 0.5) / t;
                                       return r * r;
                                     })
                                   : ratio_map(symmetric_trajectory, spec, c.grid, threads);

  if (target.format == Format::Csv) {
    std::string s = "jz,temp,ratio\n";
    for (std::size_t j = 0; j < map.axis2.size(); ++j)
      for (std::size_t i = 0; i < map.axis1.size(); ++i)
        if (map.is_valid(i, j)) s += fmt17(map.axis1[i]) + "," + fmt17(map.axis2[j]) + "," + fmt17(map.at(i, j)) + "\n";
    write_text(target.path, s, out);
  } else {
    Json doc;
    doc["schema_version"] = kSchemaVersion;
    doc["command"] = "ratio-map";
    doc["trajectory"] = "jx = jy = (1 - jz) / 2";
    doc["element"] = "JzJz";
    doc["synthetic"] = a.synthetic;
    doc["jz"] = map.axis1;
    doc["temp"] = map.axis2;
    Json ratio = Json::array(), valid = Json::array();
    for (std::size_t j = 0; j < map.axis2.size(); ++j) {
      Json rr = Json::array(), vv = Json::array();
      for (std::size_t i = 0; i < map.axis1.size(); ++i) {
        rr.push_back(map.is_valid(i, j) ? Json(map.at(i, j)) : Json(nullptr));
        vv.push_back(map.is_valid(i, j));
      }
      ratio.push_back(rr);
      valid.push_back(vv);
    }
    doc["ratio"] = ratio;
    doc["valid"] = valid;
    write_text(target.path, dump(doc), out);
  }

  if (want_contour) {
    const Contour contour = crossover_contour(map, a.contour);
    std::filesystem::path stem(target.path);
    stem.replace_extension();
    std::string s = "segment,jz,temp\n";
    for (std::size_t k = 0; k < contour.segments.size(); ++k)
      for (const auto& p : contour.segments[k]) s += std::to_string(k) + "," + fmt17(p.s) + "," + fmt17(p.t) + "\n";
    write_text(stem.string() + ".contour.csv", s, out);
    Json doc;
    doc["schema_version"] = kSchemaVersion;
    doc["command"] = "ratio-map-contour";
    doc["level"] = contour.level;
    doc["critical_jz"] = 0.5;
    Json crossings = Json::array();
    for (const auto& p : contour.column_crossings) crossings.push_back({{"jz", p.s}, {"temp", p.t}});
    doc["column_crossings"] = crossings;
    doc["lower"] = exponent_json(contour.lower);
    doc["upper"] = exponent_json(contour.upper);
    doc["pooled"] = exponent_json(contour.pooled);
    doc["asymmetry"] = contour.asymmetry;
    write_text(stem.string() + ".contour.json", dump(doc), out);
  }

  if (const std::size_t bad = map.invalid_count(); bad > 0) {
    for (std::size_t k = 0; k < map.failures.size(); ++k)
      if (!map.valid[k])
        err << "cell jz=" << fmt17(map.axis1[k % map.axis1.size()]) << " temp=" << fmt17(map.axis2[k / map.axis1.size()])
            << ": " << map.failures[k] << "\n";
    err << "error: " << bad << " ratio-map cells failed\n";
    return kExitNonConvergence;
  }
  return kExitOk;
}

inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bures metric of thermal states of the Kitaev honeycomb model", "kitaev_bures"};
  app.require_subcommand(1);

  Common common;
  TensorArgs ta;
  SweepArgs sa;
  ScalingArgs sc;
  RatioArgs ra;

  auto couplings = [](CLI::App* sub, TensorArgs& t, bool required) {
    auto* x = sub->add_option("--jx", t.jx, "Jx (decimal or p/q)");
    auto* y = sub->add_option("--jy", t.jy, "Jy");
    auto* z = sub->add_option("--jz", t.jz, "Jz");
    if (required) {
      x->required();
      y->required();
      z->required();
    }
  };

  auto* tensor = app.add_subcommand("tensor", "metric tensor at one point");
  couplings(tensor, ta, true);
  tensor->add_option("--temp", ta.temp, "temperature (0 = ground-state limit)")->required();
  auto* tensor_size = tensor->add_option("--size", ta.size, "odd lattice size L for a finite system");
  add_common(tensor, common, true);

  TensorArgs pa;
  auto* phase = app.add_subcommand("phase", "phase region, gap and Dirac points");
  couplings(phase, pa, true);
  phase->add_option("--config", common.config, "key = value file; command-line flags take precedence");

  auto* sweep = app.add_subcommand("sweep", "tensor elements along a straight coupling path");
  sweep->add_option("--path", sa.path, "start=jx,jy,jz end=jx,jy,jz")->expected(2)->required();
  sweep->add_option("--steps", sa.steps, "number of points on the path")->required();
  sweep->add_option("--temp", sa.temps, "temperature list, comma separated")->delimiter(',')->required();
  auto* sweep_size = sweep->add_option("--size", sa.size, "odd lattice size L for a finite system");
  sweep->add_option("--elements", sa.elements, "element list (default: all ten)")->delimiter(',');
  add_common(sweep, common, true);

  TensorArgs sc_j;
  auto* scaling = app.add_subcommand("scaling", "temperature scaling fit of one element");
  couplings(scaling, sc_j, true);
  scaling->add_option("--tmin", sc.tmin)->capture_default_str();
  scaling->add_option("--tmax", sc.tmax)->capture_default_str();
  scaling->add_option("--points", sc.points)->capture_default_str();
  scaling->add_option("--element", sc.element, "c:<pair> or nc:<pair>, e.g. nc:JzJz")->required();
  scaling->add_option("--model", sc.model)
      ->check(CLI::IsMember({"auto", "gapped-c", "gapped-nc", "log", "power"}))
      ->capture_default_str();
  add_common(scaling, common, true);

  auto* ratio = app.add_subcommand("ratio-map", "g^c/g^nc of JzJz along jx = jy = (1 - jz)/2");
  ratio->add_option("--jz-min", ra.jz_min)->capture_default_str();
  ratio->add_option("--jz-max", ra.jz_max)->capture_default_str();
  ratio->add_option("--t-min", ra.t_min)->capture_default_str();
  ratio->add_option("--t-max", ra.t_max)->capture_default_str();
  ratio->add_option("--res", ra.res, "NxM cells (jz x temperature), at least 8 each")->capture_default_str();
  auto* contour_opt = ratio->add_option("--contour", ra.contour, "iso-ratio level; writes contour sidecars");
  ratio->add_flag("--synthetic", ra.synthetic, "use the closed-form map (|jz - 0.5| / T)^2");
  add_common(ratio, common, true);

  try {
    // Splice config-file values in ahead of the parse.
    const auto cfg = std::find_if(args.begin(), args.end(), [](const std::string& s) {
      return s == "--config" || s.rfind("--config=", 0) == 0;
    });
    if (cfg != args.end() && !args.empty()) {
      std::string path;
      if (*cfg == "--config") {
        if (cfg + 1 == args.end()) throw InvalidArgument("--config needs a path");
        path = *(cfg + 1);
      } else {
        path = cfg->substr(9);
      }
      const CLI::App* sub = app.get_subcommand_no_throw(args.front());
      if (sub == nullptr) throw InvalidArgument("--config must follow a subcommand");
      std::set<std::string> given;
      for (const auto& a : args)
        if (a.rfind("--", 0) == 0) given.insert(a.substr(0, a.find('=')));
      const auto extra = config_tokens(path, *sub, given);
      args.insert(args.begin() + 1, extra.begin(), extra.end());
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
      app.parse(reversed);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out, err);
      return code == 0 ? kExitOk : kExitUsage;
    }

    if (tensor->parsed()) {
      return cmd_tensor(ta, common, tensor_size, out);
    }
    if (phase->parsed()) return cmd_phase(pa, out);
    if (sweep->parsed()) return cmd_sweep(sa, common, sweep_size, out);
    if (scaling->parsed()) {
      sc.jx = sc_j.jx;
      sc.jy = sc_j.jy;
      sc.jz = sc_j.jz;
      return cmd_scaling(sc, common, out);
    }
    if (ratio->parsed()) return cmd_ratio_map(ra, common, contour_opt, out, err);
    return kExitUsage;
  } catch (const NonConvergence& e) {
    err << "error: " << e.what() << "\n";
    return kExitNonConvergence;
  } catch (const FitFailure& e) {
    err << "error: " << e.what() << "\n";
    return kExitFitFailure;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

inline int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(std::move(args), out, err);
}

}  // namespace kitaev_bures::cli
