#include "dwfs/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "dwfs/common.hpp"

namespace dwfs {

using nlohmann::json;
using nlohmann::ordered_json;

const ReportEntry* Report::find(const std::string& model, const std::string& condition) const {
  for (const auto& e : entries)
    if (e.model == model && e.condition == condition) return &e;
  return nullptr;
}

void Report::add(ReportEntry entry) {
  if (std::find(models.begin(), models.end(), entry.model) == models.end()) models.push_back(entry.model);
  if (std::find(conditions.begin(), conditions.end(), entry.condition) == conditions.end())
    conditions.push_back(entry.condition);
  for (auto& e : entries)
    if (e.model == entry.model && e.condition == entry.condition) {
      e = std::move(entry);
      return;
    }
  entries.push_back(std::move(entry));
}

ordered_json Report::to_json() const {
  ordered_json j;
  j["format"] = "dwfs-report";
  j["version"] = 1;
  j["families"] = families;
  j["models"] = models;
  j["conditions"] = conditions;
  ordered_json es = ordered_json::array();
  for (const auto& e : entries)
    es.push_back({{"model", e.model}, {"condition", e.condition}, {"confusion", e.confusion.to_json()},
                  {"metrics", e.metrics.to_json()}});
  j["entries"] = std::move(es);
  j["selection"] = selection;
  j["graph_stats"] = graph_stats;
  return j;
}

Report Report::from_json(const ordered_json& j) {
  if (j.value("format", "") != "dwfs-report") fail(ErrorKind::Schema, "not a dwfs-report document");
  Report r;
  r.families = j.at("families").get<std::vector<std::string>>();
  r.models = j.at("models").get<std::vector<std::string>>();
  r.conditions = j.at("conditions").get<std::vector<std::string>>();
  for (const auto& e : j.at("entries"))
    r.entries.push_back({e.at("model").get<std::string>(), e.at("condition").get<std::string>(),
                         ConfusionMatrix::from_json(json(e.at("confusion"))),
                         MetricsTable::from_json(json(e.at("metrics")))});
  r.selection = j.value("selection", ordered_json());
  r.graph_stats = j.value("graph_stats", ordered_json());
  return r;
}

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
  return buf;
}

}  // namespace

std::string render_markdown(const Report& report) {
  std::ostringstream out;
  out << "# Malware family classification report\n\n";
  std::vector<std::string> notes;

  for (const auto& model : report.models) {
    out << "## " << model << "\n\n";
    out << "| ID | Family |";
    for (const auto& c : report.conditions) out << " " << c << " Acc | Pre | Rec | F1 |";
    out << "\n|---|---|";
    for (std::size_t i = 0; i < report.conditions.size(); ++i) out << "---|---|---|---|";
    out << "\n";

    auto cells = [&](const ReportEntry* e, auto pick) {
      std::string s;
      if (!e) return std::string(" — | — | — | — |");
      const MetricRow& r = pick(e->metrics);
      std::string mark;
      if (!r.flags.empty()) {
        for (const auto& f : r.flags) notes.push_back(model + ", " + e->condition + ", " + r.name + ": " + f);
        mark = "*";
      }
      for (double v : {r.accuracy, r.precision, r.recall, r.f1}) s += " " + pct(v) + mark + " |";
      return s;
    };

    for (std::size_t k = 0; k < report.families.size(); ++k) {
      out << "| " << k + 1 << " | " << report.families[k] << " |";
      for (const auto& c : report.conditions)
        out << cells(report.find(model, c), [&](const MetricsTable& t) -> const MetricRow& { return t.families.at(k); });
      out << "\n";
    }
    out << "| " << report.families.size() + 1 << " | Overall (macro) |";
    for (const auto& c : report.conditions)
      out << cells(report.find(model, c), [](const MetricsTable& t) -> const MetricRow& { return t.macro; });
    out << "\n| | Overall (micro) |";
    for (const auto& c : report.conditions)
      out << cells(report.find(model, c), [](const MetricsTable& t) -> const MetricRow& { return t.micro; });
    out << "\n\n";
  }

  out << "Values are percentages. Per-family Acc is one-vs-rest accuracy. Overall (macro) accuracy is trace/total; "
         "its precision, recall and F1 are unweighted means of the family rows. \"—\" marks a missing result.\n";
  if (!notes.empty()) {
    out << "\nFlagged values (*):\n\n";
    for (const auto& n : notes) out << "- " << n << "\n";
  }

  if (!report.selection.is_null()) {
    const auto& s = report.selection;
    out << "\n## Feature selection\n\n";
    out << "- selected features: " << s.value("selected_count", 0) << " of " << s.value("dimension", 0) << "\n";
    auto num = [](const ordered_json& v) {
      if (!v.is_number()) return std::string("—");
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", v.get<double>());
      return std::string(buf);
    };
    if (s.contains("beta")) out << "- beta: " << num(s.at("beta")) << ", theta: " << num(s.value("theta", ordered_json())) << "\n";
    if (s.contains("alpha_bar"))
      out << "- alpha_bar: " << num(s.at("alpha_bar")) << " (w1 " << num(s.value("w1", ordered_json())) << ", w2 "
          << num(s.value("w2", ordered_json())) << ")\n";
    if (s.contains("selected")) {
      out << "- selected:";
      for (const auto& n : s.at("selected")) out << " " << n.get<std::string>();
      out << "\n";
    }
    if (s.contains("conditions")) {
      out << "\n| Condition | Accuracy | alpha (raw) | alpha (normalized) |\n|---|---|---|---|\n";
      for (const auto& c : s.at("conditions"))
        out << "| " << c.value("condition", "") << " | " << pct(c.value("accuracy", 0.0)) << " | "
            << num(c.value("alpha_raw", ordered_json())) << " | " << num(c.value("alpha_norm", ordered_json())) << " |\n";
    }
  }
  if (!report.graph_stats.is_null() && report.graph_stats.contains("rows")) {
    out << "\n## Sensitive behavior subgraphs\n\n";
    out << "| Family | Graphs | Avg nodes | Median nodes | Avg edges | Median edges | Node red. | Edge red. |\n";
    out << "|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : report.graph_stats.at("rows")) {
      char buf[256];
      auto red = [&](const char* key) { return r.contains(key) ? pct(r.at(key).get<double>()) + "%" : std::string("—"); };
      std::snprintf(buf, sizeof buf, "| %s | %zu | %.2f | %.1f | %.2f | %.1f | %s | %s |\n",
                    r.value("group", "").c_str(), r.value("graphs", std::size_t{0}), r.value("mean_nodes", 0.0),
                    r.value("median_nodes", 0.0), r.value("mean_edges", 0.0), r.value("median_edges", 0.0),
                    red("node_reduction").c_str(), red("edge_reduction").c_str());
      out << buf;
    }
  }
  return out.str();
}

void write_report(const Report& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  write_file_atomic(dir / "report.md", render_markdown(report));
  write_file_atomic(dir / "report.json", report.to_json().dump(2) + "\n");
}

}  // namespace dwfs
