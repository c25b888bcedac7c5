#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ssrc/scene.hpp"
#include "ssrc/tensor.hpp"

namespace ssrc {

// Segmentation scores derived from a confusion matrix n[i][j] = pixels of
// truth class i predicted as j. With t_i = sum_j n_ij:
//   pixel acc = sum_i n_ii / sum_i t_i
//   class acc = mean over present classes of n_ii / t_i
//   IoU_i     = n_ii / (t_i + sum_j n_ji - n_ii), mean over present classes
// A class is present when t_i > 0; absent classes report NaN IoU.
struct MetricReport {
  int n_classes = 0;
  std::vector<std::int64_t> confusion;  // row-major n_classes x n_classes
  double pixel_acc = 0, class_acc = 0, mean_iou = 0;
  std::vector<double> iou;

  static MetricReport from_confusion(int n_classes, std::vector<std::int64_t> confusion);

  std::int64_t at(int truth, int predicted) const {
    return confusion[static_cast<std::size_t>(truth * n_classes + predicted)];
  }

  std::string csv_header() const;
  std::string csv_row() const;
  std::string to_json() const;
  static MetricReport from_json(const std::string& text);
  // Writes <stem>.csv and <stem>.json next to each other (any extension on
  // `path` is replaced).
  void write(const std::filesystem::path& path) const;
};

// Adds predicted/truth pairs to a running confusion matrix.
void accumulate_confusion(std::vector<std::int64_t>& confusion, int n_classes,
                          const std::vector<std::uint8_t>& predicted, const std::vector<std::uint8_t>& truth);

MetricReport segmentation_scores(const std::vector<std::uint8_t>& predicted, const std::vector<std::uint8_t>& truth,
                                 int n_classes);

using Refiner = std::function<Tensor(const Tensor&)>;  // (B, 3, H, W) -> (B, 3, H, W)

// Refines each scene, segments the result with the target palette and scores
// it against the scene's own labels. Scenes are processed in batches.
MetricReport evaluate_refiner(const Refiner& refine, const std::vector<ToyScene>& scenes,
                              const DomainSpec& target, std::int64_t batch = 8);

}  // namespace ssrc
