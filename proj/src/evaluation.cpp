#include "bimanual/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <unordered_map>

#include "bimanual/errors.hpp"

namespace bimanual {

std::int64_t ConfusionMatrix::support(Action truth) const {
  const auto& row = counts[index(truth)];
  return std::accumulate(row.begin(), row.end(), std::int64_t{0});
}

std::array<std::array<double, kNumActions>, kNumActions> ConfusionMatrix::normalized() const {
  std::array<std::array<double, kNumActions>, kNumActions> out{};
  for (std::size_t t = 0; t < kNumActions; ++t) {
    const std::int64_t total = support(static_cast<Action>(t));
    if (total == 0) continue;
    for (std::size_t p = 0; p < kNumActions; ++p)
      out[t][p] = static_cast<double>(counts[t][p]) / static_cast<double>(total);
  }
  return out;
}

std::vector<int> ranked_classes(std::span<const double> distribution) {
  std::vector<int> order(distribution.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return distribution[static_cast<std::size_t>(a)] > distribution[static_cast<std::size_t>(b)];
  });
  return order;
}

namespace {

double safe_div(double num, double den) { return den > 0.0 ? num / den : 0.0; }

double f1_of(double p, double r) { return safe_div(2.0 * p * r, p + r); }

}  // namespace

MetricsReport score(const std::vector<std::vector<double>>& predictions,
                    std::span<const Action> truth, int k) {
  if (predictions.size() != truth.size())
    throw InvalidArgument("score: " + std::to_string(predictions.size()) + " predictions for " +
                          std::to_string(truth.size()) + " labels");
  if (k < 1) throw InvalidArgument("score: k must be >= 1");

  MetricsReport rep;
  rep.k = k;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predictions[i].size() != kNumActions)
      throw InvalidArgument("score: distribution of length " + std::to_string(predictions[i].size()));
    const auto ranked = ranked_classes(predictions[i]);
    const int t = static_cast<int>(index(truth[i]));
    const auto top = std::min<std::size_t>(static_cast<std::size_t>(k), ranked.size());
    const bool correct = std::find(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(top), t) !=
                         ranked.begin() + static_cast<std::ptrdiff_t>(top);
    const int credited = correct ? t : ranked.front();
    ++rep.confusion.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(credited)];
  }

  std::int64_t tp_total = 0, n = 0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < kNumActions; ++c) {
    std::int64_t tp = rep.confusion.counts[c][c];
    std::int64_t predicted = 0, support = 0;
    for (std::size_t o = 0; o < kNumActions; ++o) {
      predicted += rep.confusion.counts[o][c];
      support += rep.confusion.counts[c][o];
    }
    ClassMetrics& m = rep.per_class[c];
    m.support = support;
    m.precision = safe_div(static_cast<double>(tp), static_cast<double>(predicted));
    m.recall = safe_div(static_cast<double>(tp), static_cast<double>(support));
    m.f1 = f1_of(m.precision, m.recall);
    tp_total += tp;
    n += support;
    if (support > 0) {
      ++present;
      rep.macro.precision += m.precision;
      rep.macro.recall += m.recall;
      rep.macro.f1 += m.f1;
      const double w = static_cast<double>(support);
      rep.weighted.precision += w * m.precision;
      rep.weighted.recall += w * m.recall;
      rep.weighted.f1 += w * m.f1;
    }
  }
  if (present > 0) {
    const double p = static_cast<double>(present);
    rep.macro.precision /= p;
    rep.macro.recall /= p;
    rep.macro.f1 /= p;
  }
  if (n > 0) {
    const double total = static_cast<double>(n);
    rep.weighted.precision /= total;
    rep.weighted.recall /= total;
    rep.weighted.f1 /= total;
  }
  // Every frame gets exactly one credited prediction, so micro P = R = accuracy.
  rep.accuracy = safe_div(static_cast<double>(tp_total), static_cast<double>(n));
  rep.micro.precision = rep.accuracy;
  rep.micro.recall = rep.accuracy;
  rep.micro.f1 = f1_of(rep.micro.precision, rep.micro.recall);
  return rep;
}

// ---------------------------------------------------------------------------

AblationMode parse_ablation(const std::string& token) {
  if (token == "full") return AblationMode::full;
  if (token == "contact_only") return AblationMode::contact_only;
  if (token == "centroids") return AblationMode::centroids;
  if (token == "no_temporal") return AblationMode::no_temporal;
  throw ConfigError("unknown ablation mode \"" + token + "\"");
}

std::string ablation_name(AblationMode mode) {
  switch (mode) {
    case AblationMode::full: return "full";
    case AblationMode::contact_only: return "contact_only";
    case AblationMode::centroids: return "centroids";
    case AblationMode::no_temporal: return "no_temporal";
  }
  return "full";
}

Sample ablation_transform(const Sample& s, AblationMode mode) {
  Sample out = s;
  switch (mode) {
    case AblationMode::full:
      break;
    case AblationMode::contact_only: {
      RelationSet keep;
      keep.insert(Relation::contact);
      // Edges stay even when nothing but zeros is left on them.
      for (SceneEdge& e : out.graph.edges)
        if (!e.attr.temporal) e.attr.relations = e.attr.relations & keep;
      break;
    }
    case AblationMode::centroids: {
      if (s.centroids.size() != s.graph.nodes.size())
        throw InvalidArgument("centroid ablation needs one centroid per node");
      std::vector<SceneEdge> edges;
      for (const SceneEdge& e : s.graph.edges)
        if (e.attr.temporal) edges.push_back(e);
      out.graph.edges = std::move(edges);
      for (std::size_t i = 0; i < out.graph.nodes.size(); ++i) {
        const Vec3& c = s.centroids[i];
        out.graph.nodes[i].extra = {c[0] / 1000.0, c[1] / 1000.0, c[2] / 1000.0};
      }
      break;
    }
    case AblationMode::no_temporal: {
      if (s.graph.nodes.empty()) break;
      std::int64_t newest = s.graph.nodes.front().frame;
      for (const SceneNode& n : s.graph.nodes) newest = std::max(newest, n.frame);
      std::vector<int> remap(s.graph.nodes.size(), -1);
      out.graph.nodes.clear();
      out.centroids.clear();
      for (std::size_t i = 0; i < s.graph.nodes.size(); ++i) {
        if (s.graph.nodes[i].frame != newest) continue;
        remap[i] = static_cast<int>(out.graph.nodes.size());
        out.graph.nodes.push_back(s.graph.nodes[i]);
        if (i < s.centroids.size()) out.centroids.push_back(s.centroids[i]);
      }
      out.graph.edges.clear();
      for (const SceneEdge& e : s.graph.edges) {
        const int a = remap[static_cast<std::size_t>(e.sender)];
        const int b = remap[static_cast<std::size_t>(e.receiver)];
        if (a < 0 || b < 0 || e.attr.temporal) continue;
        out.graph.edges.push_back({e.attr, a, b});
      }
      break;
    }
  }
  return out;
}

std::vector<Sample> ablation_transform(std::span<const Sample> samples, AblationMode mode) {
  std::vector<Sample> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back(ablation_transform(s, mode));
  return out;
}

// ---------------------------------------------------------------------------

std::vector<Segment> pool_segments(std::span<const Action> labels) {
  if (labels.empty()) throw InvalidArgument("pool_segments needs at least one label");
  std::vector<Segment> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto f = static_cast<std::int64_t>(i);
    if (!out.empty() && out.back().action == labels[i])
      out.back().end = f;
    else
      out.push_back({labels[i], f, f});
  }
  return out;
}

std::vector<Action> expand_segments(std::span<const Segment> segments) {
  std::vector<Action> out;
  for (const Segment& s : segments)
    for (std::int64_t f = s.start; f <= s.end; ++f) out.push_back(s.action);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void write_metrics_csv(std::ostream& out, const MetricsReport& top1, const MetricsReport& topk) {
  const std::string k = std::to_string(topk.k);
  out << "class,top1_precision,top1_recall,top1_f1,top" << k << "_precision,top" << k
      << "_recall,top" << k << "_f1,support\n";
  auto row = [&](const std::string& label, double p1, double r1, double f1, double pk, double rk,
                 double fk, std::int64_t support) {
    out << label << ',' << fmt("%.6f", p1) << ',' << fmt("%.6f", r1) << ',' << fmt("%.6f", f1) << ','
        << fmt("%.6f", pk) << ',' << fmt("%.6f", rk) << ',' << fmt("%.6f", fk) << ',' << support
        << '\n';
  };
  std::int64_t total = 0;
  for (std::size_t c = 0; c < kNumActions; ++c) {
    const ClassMetrics& a = top1.per_class[c];
    const ClassMetrics& b = topk.per_class[c];
    if (a.support == 0) continue;
    total += a.support;
    row(std::string(kActionNames[c]), a.precision, a.recall, a.f1, b.precision, b.recall, b.f1,
        a.support);
  }
  row("Micro", top1.micro.precision, top1.micro.recall, top1.micro.f1, topk.micro.precision,
      topk.micro.recall, topk.micro.f1, total);
  row("Macro", top1.macro.precision, top1.macro.recall, top1.macro.f1, topk.macro.precision,
      topk.macro.recall, topk.macro.f1, total);
  row("Weighted", top1.weighted.precision, top1.weighted.recall, top1.weighted.f1,
      topk.weighted.precision, topk.weighted.recall, topk.weighted.f1, total);
}

void write_confusion_csv(std::ostream& out, const ConfusionMatrix& cm) {
  out << "truth";
  for (auto n : kActionNames) out << ',' << n;
  out << '\n';
  for (std::size_t t = 0; t < kNumActions; ++t) {
    out << kActionNames[t];
    for (std::size_t p = 0; p < kNumActions; ++p) out << ',' << cm.counts[t][p];
    out << '\n';
  }
}

void write_confusion_svg(std::ostream& out, const ConfusionMatrix& cm, const std::string& title) {
  const auto norm = cm.normalized();
  constexpr int cell = 40, left = 110, top = 60;
  const int n = static_cast<int>(kNumActions);
  const int width = left + n * cell + 20, height = top + n * cell + 110;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << left << "\" y=\"24\" font-size=\"15\">" << xml_escape(title) << "</text>\n";
  for (int t = 0; t < n; ++t) {
    out << "<text x=\"" << left - 6 << "\" y=\"" << top + t * cell + cell / 2 + 4
        << "\" text-anchor=\"end\">" << kActionNames[static_cast<std::size_t>(t)] << "</text>\n";
    for (int p = 0; p < n; ++p) {
      const double v = norm[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
      const int shade = static_cast<int>(255.0 - 200.0 * v + 0.5);
      char color[16];
      std::snprintf(color, sizeof color, "#%02x%02xff", shade, shade);
      out << "<rect x=\"" << left + p * cell << "\" y=\"" << top + t * cell << "\" width=\"" << cell
          << "\" height=\"" << cell << "\" fill=\"" << color << "\" stroke=\"#999\"/>\n";
      if (v > 0.0)
        out << "<text x=\"" << left + p * cell + cell / 2 << "\" y=\"" << top + t * cell + cell / 2 + 4
            << "\" text-anchor=\"middle\" fill=\"" << (v > 0.6 ? "white" : "black") << "\">"
            << fmt("%.2f", v) << "</text>\n";
    }
  }
  for (int p = 0; p < n; ++p) {
    const int x = left + p * cell + cell / 2;
    const int y = top + n * cell + 8;
    out << "<text x=\"" << x << "\" y=\"" << y << "\" transform=\"rotate(60 " << x << ' ' << y
        << ")\">" << kActionNames[static_cast<std::size_t>(p)] << "</text>\n";
  }
  out << "<text x=\"12\" y=\"" << top - 8 << "\">truth \\ predicted</text>\n";
  out << "</svg>\n";
}

Palette default_palette() {
  return {"#cccccc",  // idle
          "#ff7b74",  // approach
          "#ff0c00",  // retreat
          "#99ff95",  // lift
          "#00ff09",  // place
          "#f6eb87",  // hold
          "#0058ff",  // stir
          "#9700ff",  // pour
          "#8c564b",  // cut
          "#ff8600",  // drink
          "#17becf",  // wipe
          "#7f7f7f",  // hammer
          "#bcbd22",  // saw
          "#e377c2"}; // screw
}

void write_timeline_svg(std::ostream& out, const std::vector<TimelineTrack>& tracks, double fps,
                        const Palette& palette) {
  if (!(fps > 0.0)) throw InvalidArgument("fps must be positive");
  std::int64_t frames = 1;
  for (const auto& t : tracks)
    for (const Segment& s : t.segments) frames = std::max(frames, s.end + 1);
  constexpr int left = 150, row = 28, gap = 10, top = 20, plot = 900;
  const double px = static_cast<double>(plot) / static_cast<double>(frames);
  const int legend_y = top + static_cast<int>(tracks.size()) * (row + gap) + 30;
  const int height = legend_y + 20 * static_cast<int>((kNumActions + 4) / 5) + 20;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + plot + 20 << "\" height=\""
      << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    const int y = top + static_cast<int>(i) * (row + gap);
    out << "<text x=\"" << left - 8 << "\" y=\"" << y + row / 2 + 4 << "\" text-anchor=\"end\">"
        << xml_escape(tracks[i].label) << "</text>\n";
    for (const Segment& s : tracks[i].segments) {
      out << "<rect x=\"" << fmt("%.3f", left + px * static_cast<double>(s.start)) << "\" y=\"" << y
          << "\" width=\"" << fmt("%.3f", px * static_cast<double>(s.end - s.start + 1))
          << "\" height=\"" << row << "\" fill=\"" << palette[index(s.action)] << "\"><title>"
          << name(s.action) << ' ' << fmt("%.2f", static_cast<double>(s.start) / fps) << "-"
          << fmt("%.2f", static_cast<double>(s.end + 1) / fps) << " s</title></rect>\n";
    }
  }
  const int axis_y = top + static_cast<int>(tracks.size()) * (row + gap);
  const double seconds = static_cast<double>(frames) / fps;
  for (int tick = 0; tick <= static_cast<int>(seconds); ++tick) {
    const double x = left + px * tick * fps;
    out << "<text x=\"" << fmt("%.1f", x) << "\" y=\"" << axis_y + 6 << "\" text-anchor=\"middle\">"
        << tick << "s</text>\n";
  }
  for (std::size_t a = 0; a < kNumActions; ++a) {
    const int x = left + static_cast<int>(a % 5) * 170;
    const int y = legend_y + static_cast<int>(a / 5) * 20;
    out << "<rect x=\"" << x << "\" y=\"" << y - 11 << "\" width=\"14\" height=\"14\" fill=\""
        << palette[a] << "\"/><text x=\"" << x + 20 << "\" y=\"" << y << "\">" << kActionNames[a]
        << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace bimanual
