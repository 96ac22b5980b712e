#include "dwfs/metrics.hpp"

#include "dwfs/common.hpp"

namespace dwfs {

using nlohmann::json;
using nlohmann::ordered_json;

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < classes; ++i) t += at(i, i);
  return t;
}

ordered_json ConfusionMatrix::to_json() const {
  ordered_json rows = ordered_json::array();
  for (std::size_t i = 0; i < classes; ++i)
    rows.push_back(std::vector<std::uint64_t>(counts.begin() + static_cast<std::ptrdiff_t>(i * classes),
                                              counts.begin() + static_cast<std::ptrdiff_t>((i + 1) * classes)));
  return rows;
}

ConfusionMatrix ConfusionMatrix::from_json(const json& j) {
  ConfusionMatrix cm;
  cm.classes = j.size();
  for (const auto& row : j) {
    if (row.size() != cm.classes) fail(ErrorKind::Schema, "confusion matrix must be square");
    for (const auto& v : row) cm.counts.push_back(v.get<std::uint64_t>());
  }
  return cm;
}

ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred, std::size_t classes) {
  if (y_true.size() != y_pred.size())
    fail(ErrorKind::Argument, "confusion: " + std::to_string(y_true.size()) + " labels but " +
                                  std::to_string(y_pred.size()) + " predictions");
  ConfusionMatrix cm{classes, std::vector<std::uint64_t>(classes * classes, 0)};
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    for (int y : {y_true[i], y_pred[i]})
      if (y < 0 || static_cast<std::size_t>(y) >= classes)
        fail(ErrorKind::Validation, "label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    ++cm.counts[static_cast<std::size_t>(y_true[i]) * classes + static_cast<std::size_t>(y_pred[i])];
  }
  return cm;
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den, const char* what, std::vector<std::string>& flags) {
  if (den == 0) {
    flags.push_back(std::string(what) + " undefined (zero denominator), reported as 0");
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

double harmonic(double p, double r) { return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0; }

ordered_json row_json(const MetricRow& r) {
  return {{"name", r.name}, {"accuracy", r.accuracy}, {"precision", r.precision},
          {"recall", r.recall}, {"f1", r.f1},       {"flags", r.flags}};
}

MetricRow row_from(const json& j) {
  return {j.at("name").get<std::string>(), j.at("accuracy").get<double>(), j.at("precision").get<double>(),
          j.at("recall").get<double>(), j.at("f1").get<double>(), j.value("flags", std::vector<std::string>{})};
}

}  // namespace

MetricsTable family_metrics(const ConfusionMatrix& cm, const FamilyLabelMap* families) {
  MetricsTable t;
  t.total = cm.total();
  const std::size_t C = cm.classes;
  double sp = 0, sr = 0, sf = 0;
  for (std::size_t k = 0; k < C; ++k) {
    std::uint64_t tp = cm.at(k, k), fp = 0, fn = 0;
    for (std::size_t j = 0; j < C; ++j) {
      if (j == k) continue;
      fp += cm.at(j, k);
      fn += cm.at(k, j);
    }
    const std::uint64_t tn = t.total - tp - fp - fn;
    MetricRow r;
    r.name = families && k < families->size() ? families->name(k) : std::to_string(k);
    r.accuracy = ratio(tp + tn, t.total, "accuracy", r.flags);
    r.precision = ratio(tp, tp + fp, "precision", r.flags);
    r.recall = ratio(tp, tp + fn, "recall", r.flags);
    r.f1 = harmonic(r.precision, r.recall);
    sp += r.precision;
    sr += r.recall;
    sf += r.f1;
    t.families.push_back(std::move(r));
  }
  t.macro.name = "overall (macro)";
  t.macro.accuracy = ratio(cm.trace(), t.total, "accuracy", t.macro.flags);
  if (C > 0) {
    t.macro.precision = sp / static_cast<double>(C);
    t.macro.recall = sr / static_cast<double>(C);
    t.macro.f1 = sf / static_cast<double>(C);
  }
  t.micro.name = "overall (micro)";
  t.micro.accuracy = t.macro.accuracy;
  t.micro.precision = t.micro.recall = t.micro.f1 = t.macro.accuracy;
  return t;
}

ordered_json MetricsTable::to_json() const {
  ordered_json fam = ordered_json::array();
  for (const auto& r : families) fam.push_back(row_json(r));
  return {{"families", fam}, {"macro", row_json(macro)}, {"micro", row_json(micro)}, {"total", total}};
}

MetricsTable MetricsTable::from_json(const json& j) {
  MetricsTable t;
  for (const auto& r : j.at("families")) t.families.push_back(row_from(r));
  t.macro = row_from(j.at("macro"));
  t.micro = row_from(j.at("micro"));
  t.total = j.at("total").get<std::uint64_t>();
  return t;
}

}  // namespace dwfs
