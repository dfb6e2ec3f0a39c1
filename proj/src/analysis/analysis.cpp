#include "jst/analysis/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <thread>

#include "jst/error.hpp"
#include "jst/eval/decode.hpp"
#include "jst/losses/objectives.hpp"

namespace jst::analysis {

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << body;
  if (!out) throw IoError("failed writing " + path.string());
}

void prepare_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create report directory " + dir.string());
}

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

const char* const palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                               "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22"};

// Line chart with fixed geometry and number formatting so equal input gives
// equal bytes.
std::string line_chart(const std::vector<Series>& series, const std::string& x_label, const std::string& y_label) {
  constexpr double width = 640, height = 420, left = 70, right = 170, top = 20, bottom = 50;
  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo, y_lo = x_lo, y_hi = -x_lo;
  for (const auto& s : series) {
    for (double v : s.x) x_lo = std::min(x_lo, v), x_hi = std::max(x_hi, v);
    for (double v : s.y) y_lo = std::min(y_lo, v), y_hi = std::max(y_hi, v);
  }
  if (!(x_hi > x_lo)) x_lo -= 0.5, x_hi += 0.5;
  if (!(y_hi > y_lo)) y_lo -= 0.5, y_hi += 0.5;
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  auto px = [&](double v) { return left + (v - x_lo) / (x_hi - x_lo) * plot_w; };
  auto py = [&](double v) { return top + (1.0 - (v - y_lo) / (y_hi - y_lo)) * plot_h; };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" "
                    "font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n";
  svg += "<line x1=\"" + fmt("%.2f", left) + "\" y1=\"" + fmt("%.2f", top + plot_h) + "\" x2=\"" +
         fmt("%.2f", left + plot_w) + "\" y2=\"" + fmt("%.2f", top + plot_h) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + fmt("%.2f", left) + "\" y1=\"" + fmt("%.2f", top) + "\" x2=\"" + fmt("%.2f", left) +
         "\" y2=\"" + fmt("%.2f", top + plot_h) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x_lo + (x_hi - x_lo) * i / 4.0, yv = y_lo + (y_hi - y_lo) * i / 4.0;
    svg += "<text x=\"" + fmt("%.2f", px(xv)) + "\" y=\"" + fmt("%.2f", top + plot_h + 16) +
           "\" text-anchor=\"middle\">" + fmt("%.3g", xv) + "</text>\n";
    svg += "<text x=\"" + fmt("%.2f", left - 6) + "\" y=\"" + fmt("%.2f", py(yv) + 4) + "\" text-anchor=\"end\">" +
           fmt("%.3g", yv) + "</text>\n";
  }
  svg += "<text x=\"" + fmt("%.2f", left + plot_w / 2) + "\" y=\"" + fmt("%.2f", height - 10) +
         "\" text-anchor=\"middle\">" + x_label + "</text>\n";
  svg += "<text transform=\"translate(16," + fmt("%.2f", top + plot_h / 2) +
         ") rotate(-90)\" text-anchor=\"middle\">" + y_label + "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = palette[i % (sizeof palette / sizeof *palette)];
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      svg += (k ? " " : "") + fmt("%.2f", px(s.x[k])) + "," + fmt("%.2f", py(s.y[k]));
    }
    svg += "\"/>\n";
    const double ly = top + 14.0 + 18.0 * static_cast<double>(i);
    svg += "<line x1=\"" + fmt("%.2f", left + plot_w + 12) + "\" y1=\"" + fmt("%.2f", ly - 4) + "\" x2=\"" +
           fmt("%.2f", left + plot_w + 32) + "\" y2=\"" + fmt("%.2f", ly - 4) + "\" stroke=\"" + color +
           "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + fmt("%.2f", left + plot_w + 38) + "\" y=\"" + fmt("%.2f", ly) + "\">" + s.label +
           "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace

bool ModuleSelector::matches(const std::string& name) const {
  if (prefix.empty()) return false;
  if (prefix.back() == '.') return name.rfind(prefix, 0) == 0;
  return name == prefix || name.rfind(prefix + ".", 0) == 0;
}

std::vector<std::string> ModuleSelector::match(const trainer::Checkpoint& ckpt) const {
  std::vector<std::string> out;
  for (const auto& [name, tensor] : ckpt.tensors) {
    if (matches(name)) out.push_back(name);
  }
  return out;
}

trainer::Checkpoint interpolate_module(const trainer::Checkpoint& trained, const trainer::Checkpoint& pretrained,
                                       const ModuleSelector& selector, double rho) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw AnalysisError("interpolation ratio " + fmt("%g", rho) + " outside [0, 1]");
  const auto names = selector.match(trained);
  if (names.empty()) throw AnalysisError("selector '" + selector.prefix + "' matches no tensor");
  auto out = trained;
  for (const auto& name : names) {
    if (!pretrained.contains(name)) throw AnalysisError("no pretrained counterpart for " + name);
    const auto& p = pretrained.at(name);
    auto& t = out.tensors.at(name);
    if (p.shape != t.shape) {
      throw AnalysisError("shape mismatch for " + name + ": trained " + ad::shape_string(t.shape) + " vs pretrained " +
                          ad::shape_string(p.shape));
    }
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      t.values[i] = static_cast<float>((1.0 - rho) * static_cast<double>(t.values[i]) +
                                       rho * static_cast<double>(p.values[i]));
    }
  }
  out.metadata["interpolated"] = selector.prefix + "@" + fmt("%g", rho);
  return out;
}

std::vector<double> default_ratios() { return {0.0, 0.25, 0.5, 0.75, 1.0}; }

std::vector<CriticalityCurve> criticality_sweep(const model::ModelConfig& config, const trainer::Checkpoint& trained,
                                                const trainer::Checkpoint& pretrained,
                                                const std::vector<ModuleSelector>& selectors,
                                                const std::vector<double>& ratios, const data::Dataset& dev,
                                                const SweepOptions& options) {
  if (selectors.empty()) throw ContractError("criticality_sweep: no selectors");
  if (ratios.empty()) throw ContractError("criticality_sweep: no ratios");
  if (dev.empty()) throw ContractError("criticality_sweep: empty dev set");
  std::vector<std::vector<std::string>> matched;
  for (const auto& s : selectors) {
    matched.push_back(s.match(trained));
    if (matched.back().empty()) throw AnalysisError("selector '" + s.prefix + "' matches no tensor");
  }
  for (std::size_t a = 0; a < matched.size(); ++a) {
    for (std::size_t b = a + 1; b < matched.size(); ++b) {
      for (const auto& name : matched[a]) {
        if (std::find(matched[b].begin(), matched[b].end(), name) != matched[b].end()) {
          throw AnalysisError("selectors '" + selectors[a].prefix + "' and '" + selectors[b].prefix +
                              "' overlap on " + name);
        }
      }
    }
  }

  auto score = [&](const trainer::Checkpoint& ckpt) {
    const auto model = model::JointModel::from_checkpoint(config, ckpt);
    return eval::evaluate_bleu(model, dev, options.beam_size, 1);
  };

  std::vector<CriticalityCurve> curves(selectors.size());
  for (std::size_t s = 0; s < selectors.size(); ++s) {
    curves[s].selector = selectors[s].prefix;
    curves[s].ratios = ratios;
    curves[s].bleu.assign(ratios.size(), 0.0);
    curves[s].bleu_delta.assign(ratios.size(), 0.0);
  }

  const std::size_t jobs = selectors.size() * ratios.size();
  std::size_t workers = options.workers == 0 ? std::max(1u, std::thread::hardware_concurrency()) : options.workers;
  workers = std::min(workers, jobs + 1);
  double baseline = 0.0;
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  // Job index `jobs` is the untouched baseline.
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t j = next++; j <= jobs; j = next++) {
        if (j == jobs) {
          baseline = score(trained);
          continue;
        }
        const auto s = j / ratios.size(), r = j % ratios.size();
        curves[s].bleu[r] = score(interpolate_module(trained, pretrained, selectors[s], ratios[r]));
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (auto& c : curves) {
    for (std::size_t r = 0; r < ratios.size(); ++r) c.bleu_delta[r] = c.bleu[r] - baseline;
  }
  return curves;
}

void PearsonAccumulator::add(double x, double y) {
  ++n_;
  const double n = static_cast<double>(n_);
  const double dx = x - mean_x_;
  const double dy = y - mean_y_;
  mean_x_ += dx / n;
  mean_y_ += dy / n;
  m2_x_ += dx * (x - mean_x_);
  m2_y_ += dy * (y - mean_y_);
  c_xy_ += dx * (y - mean_y_);
}

bool PearsonAccumulator::degenerate() const noexcept { return n_ < 2 || m2_x_ <= 0.0 || m2_y_ <= 0.0; }

double PearsonAccumulator::r() const {
  if (degenerate()) return 0.0;
  return std::clamp(c_xy_ / std::sqrt(m2_x_ * m2_y_), -1.0, 1.0);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("pearson: series lengths differ");
  PearsonAccumulator acc;
  for (std::size_t i = 0; i < x.size(); ++i) acc.add(x[i], y[i]);
  return acc.r();
}

CorrelationAccumulator::CorrelationAccumulator(std::size_t layers, std::size_t width)
    : layers_(layers), width_(width), acc_(layers * width) {
  if (layers == 0 || width == 0) throw ContractError("correlation needs at least one layer and component");
}

void CorrelationAccumulator::add(const std::vector<ad::Tensor>& speech_states,
                                 const std::vector<ad::Tensor>& text_states) {
  if (speech_states.size() != layers_ || text_states.size() != layers_) {
    throw DimensionError("correlation: expected " + std::to_string(layers_) + " layer states per path");
  }
  for (std::size_t l = 0; l < layers_; ++l) {
    const auto& s = speech_states[l];
    const auto& t = text_states[l];
    if (s.shape() != t.shape() || s.cols() != width_) {
      throw DimensionError("correlation: misaligned states at layer " + std::to_string(l) + ": " +
                           ad::shape_string(s.shape()) + " vs " + ad::shape_string(t.shape()));
    }
    const auto sd = s.data(), td = t.data();
    for (std::size_t k = 0; k < s.rows(); ++k) {
      for (std::size_t d = 0; d < width_; ++d) acc_[l * width_ + d].add(sd[k * width_ + d], td[k * width_ + d]);
    }
  }
  points_ += speech_states.front().rows();
}

CorrelationProfile CorrelationAccumulator::profile() const {
  if (points_ == 0) throw ContractError("correlation: no data points");
  CorrelationProfile p;
  p.n_points = points_;
  p.component_r.assign(layers_, std::vector<double>(width_));
  p.degenerate.assign(layers_, std::vector<bool>(width_));
  for (std::size_t l = 0; l < layers_; ++l) {
    double sum = 0.0;
    for (std::size_t d = 0; d < width_; ++d) {
      const auto& a = acc_[l * width_ + d];
      p.degenerate[l][d] = a.degenerate();
      p.component_r[l][d] = a.r();
      sum += p.component_r[l][d];
    }
    p.layer_r.push_back(sum / static_cast<double>(width_));
  }
  return p;
}

CorrelationProfile modality_correlation(const model::JointModel& model, const data::Dataset& paired) {
  if (paired.empty()) throw ContractError("modality_correlation: empty dataset");
  if (!model.has_speech_path() || !model.has_text_path()) {
    throw ContractError("modality_correlation needs a model with both input paths");
  }
  const auto& cfg = model.config();
  CorrelationAccumulator acc(cfg.n_decoder_layers, cfg.d_model);
  for (const auto& sample : paired) {
    if (!sample.has_speech()) throw ContractError("sample " + std::to_string(sample.id) + " has no speech input");
    const auto targets = loss::decoder_targets(sample, loss::Objective::st);
    ad::Graph g(ad::Graph::Mode::inference);
    const model::ForwardContext ctx{g, false, nullptr, 0.0};
    const auto speech = model.forward_speech(ctx, sample.feature_tensor(), targets);
    const auto text = model.forward_text(ctx, sample.source, targets);
    acc.add(speech.decoder_states, text.decoder_states);
  }
  return acc.profile();
}

void emit_criticality_report(const std::vector<CriticalityCurve>& curves, const std::filesystem::path& out_dir) {
  if (curves.empty()) throw ContractError("criticality report: no curves");
  std::string csv = "selector,ratio,bleu,bleu_delta\n";
  std::vector<Series> series;
  for (const auto& c : curves) {
    if (c.ratios.size() != c.bleu.size() || c.ratios.size() != c.bleu_delta.size()) {
      throw ContractError("criticality report: ragged curve " + c.selector);
    }
    Series s{c.selector, c.ratios, c.bleu_delta};
    for (std::size_t i = 0; i < c.ratios.size(); ++i) {
      csv += c.selector + "," + fmt("%.6g", c.ratios[i]) + "," + fmt("%.6f", c.bleu[i]) + "," +
             fmt("%.6f", c.bleu_delta[i]) + "\n";
    }
    series.push_back(std::move(s));
  }
  prepare_dir(out_dir);
  write_file(out_dir / "criticality.csv", csv);
  write_file(out_dir / "criticality.svg", line_chart(series, "interpolation ratio (1 = pretrained)", "BLEU change"));
}

void emit_correlation_report(const std::vector<std::pair<std::string, CorrelationProfile>>& profiles,
                             const std::filesystem::path& out_dir) {
  if (profiles.empty()) throw ContractError("correlation report: no profiles");
  std::vector<std::pair<std::string, std::string>> files;
  std::vector<Series> series;
  for (const auto& [label, p] : profiles) {
    if (p.layer_r.empty()) throw ContractError("correlation report: empty profile " + label);
    std::string csv = "layer,r_mean,r_min_component,r_max_component,n_points\n";
    Series s{label.empty() ? "r" : label, {}, {}};
    for (std::size_t l = 0; l < p.layer_r.size(); ++l) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (std::size_t d = 0; d < p.component_r[l].size(); ++d) {
        if (p.degenerate[l][d]) continue;
        lo = std::min(lo, p.component_r[l][d]);
        hi = std::max(hi, p.component_r[l][d]);
      }
      if (lo > hi) lo = hi = 0.0;
      csv += std::to_string(l + 1) + "," + fmt("%.9f", p.layer_r[l]) + "," + fmt("%.9f", lo) + "," +
             fmt("%.9f", hi) + "," + std::to_string(p.n_points) + "\n";
      s.x.push_back(static_cast<double>(l + 1));
      s.y.push_back(p.layer_r[l]);
    }
    files.emplace_back(label.empty() ? "correlation.csv" : "correlation_" + label + ".csv", std::move(csv));
    series.push_back(std::move(s));
  }
  prepare_dir(out_dir);
  for (const auto& [name, body] : files) write_file(out_dir / name, body);
  write_file(out_dir / "correlation.svg", line_chart(series, "decoder layer", "correlation r"));
}

}  // namespace jst::analysis
