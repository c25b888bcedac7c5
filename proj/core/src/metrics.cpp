#include "ssrc/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "ssrc/error.hpp"

namespace ssrc {

namespace {

std::string column_name(int c, int n_classes) {
  return n_classes == kNumClasses ? std::string("iou_") + class_name(c) : "iou_" + std::to_string(c);
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

MetricReport MetricReport::from_confusion(int n_classes, std::vector<std::int64_t> confusion) {
  if (n_classes < 1) throw ContractError("metric report: n_classes must be >= 1");
  if (confusion.size() != static_cast<std::size_t>(n_classes * n_classes)) {
    throw ShapeError("metric report: confusion matrix has " + std::to_string(confusion.size()) + " entries, expected " +
                     std::to_string(n_classes * n_classes));
  }
  MetricReport r;
  r.n_classes = n_classes;
  r.confusion = std::move(confusion);
  r.iou.assign(static_cast<std::size_t>(n_classes), std::numeric_limits<double>::quiet_NaN());
  std::int64_t total = 0, diag = 0;
  double acc_sum = 0, iou_sum = 0;
  int present = 0;
  for (int i = 0; i < n_classes; ++i) {
    std::int64_t t = 0, predicted = 0;
    for (int j = 0; j < n_classes; ++j) {
      if (r.at(i, j) < 0) throw ContractError("metric report: negative confusion count");
      t += r.at(i, j);
      predicted += r.at(j, i);
    }
    const auto nii = r.at(i, i);
    total += t;
    diag += nii;
    if (t == 0) continue;
    ++present;
    acc_sum += static_cast<double>(nii) / static_cast<double>(t);
    r.iou[static_cast<std::size_t>(i)] = static_cast<double>(nii) / static_cast<double>(t + predicted - nii);
    iou_sum += r.iou[static_cast<std::size_t>(i)];
  }
  if (total == 0) throw ContractError("metric report: empty confusion matrix");
  r.pixel_acc = static_cast<double>(diag) / static_cast<double>(total);
  r.class_acc = acc_sum / present;
  r.mean_iou = iou_sum / present;
  return r;
}

std::string MetricReport::csv_header() const {
  std::string h = "pixel_acc,class_acc,mean_iou";
  for (int c = 0; c < n_classes; ++c) h += "," + column_name(c, n_classes);
  return h;
}

std::string MetricReport::csv_row() const {
  std::string row = fmt(pixel_acc) + "," + fmt(class_acc) + "," + fmt(mean_iou);
  for (double v : iou) row += "," + fmt(v);
  return row;
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["pixel_acc"] = pixel_acc;
  j["class_acc"] = class_acc;
  j["mean_iou"] = mean_iou;
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (int c = 0; c < n_classes; ++c) {
    const double v = iou[static_cast<std::size_t>(c)];
    per[column_name(c, n_classes).substr(4)] = std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v);
  }
  j["iou"] = per;
  j["n_classes"] = n_classes;
  j["confusion"] = confusion;
  return j.dump(2);
}

MetricReport MetricReport::from_json(const std::string& text) {
  try {
    auto j = nlohmann::json::parse(text);
    return from_confusion(j.at("n_classes").get<int>(), j.at("confusion").get<std::vector<std::int64_t>>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("metric report JSON: ") + e.what());
  }
}

void MetricReport::write(const std::filesystem::path& path) const {
  auto stem = path;
  stem.replace_extension();
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  {
    std::ofstream csv(stem.string() + ".csv");
    if (!csv) throw IngestionError("cannot write " + stem.string() + ".csv");
    csv << csv_header() << "\n" << csv_row() << "\n";
  }
  std::ofstream js(stem.string() + ".json");
  if (!js) throw IngestionError("cannot write " + stem.string() + ".json");
  js << to_json() << "\n";
}

void accumulate_confusion(std::vector<std::int64_t>& confusion, int n_classes,
                          const std::vector<std::uint8_t>& predicted, const std::vector<std::uint8_t>& truth) {
  if (predicted.size() != truth.size()) {
    throw ShapeError("segmentation_scores: prediction has " + std::to_string(predicted.size()) +
                     " pixels, truth has " + std::to_string(truth.size()));
  }
  confusion.resize(static_cast<std::size_t>(n_classes * n_classes), 0);
  for (std::size_t k = 0; k < truth.size(); ++k) {
    if (truth[k] >= n_classes || predicted[k] >= n_classes) {
      throw IndexError("segmentation_scores: label " + std::to_string(std::max(truth[k], predicted[k])) +
                       " at pixel " + std::to_string(k) + " not below n_classes " + std::to_string(n_classes));
    }
    ++confusion[static_cast<std::size_t>(truth[k] * n_classes + predicted[k])];
  }
}

MetricReport segmentation_scores(const std::vector<std::uint8_t>& predicted, const std::vector<std::uint8_t>& truth,
                                 int n_classes) {
  if (n_classes < 1 || n_classes > 256) throw ContractError("segmentation_scores: n_classes must be in 1..256");
  std::vector<std::int64_t> confusion;
  accumulate_confusion(confusion, n_classes, predicted, truth);
  return MetricReport::from_confusion(n_classes, std::move(confusion));
}

MetricReport evaluate_refiner(const Refiner& refine, const std::vector<ToyScene>& scenes, const DomainSpec& target,
                              std::int64_t batch) {
  if (scenes.empty()) throw ContractError("evaluate_refiner: no scenes");
  if (batch < 1) throw ContractError("evaluate_refiner: batch must be >= 1");
  std::vector<std::int64_t> confusion;
  NoGradGuard no_grad;
  for (std::size_t first = 0; first < scenes.size(); first += static_cast<std::size_t>(batch)) {
    const auto last = std::min(scenes.size(), first + static_cast<std::size_t>(batch));
    std::vector<Tensor> images;
    for (auto i = first; i < last; ++i) images.push_back(scenes[i].image);
    const Tensor refined = refine(stack_images(images));
    if (refined.shape() != stack_images(images).shape()) {
      throw ShapeError("evaluate_refiner: refiner changed the batch shape to " + shape_str(refined.shape()));
    }
    for (auto i = first; i < last; ++i) {
      const auto predicted = oracle_segment(batch_item(refined, static_cast<std::int64_t>(i - first)), target);
      accumulate_confusion(confusion, kNumClasses, predicted, scenes[i].labels);
    }
  }
  return MetricReport::from_confusion(kNumClasses, std::move(confusion));
}

}  // namespace ssrc
