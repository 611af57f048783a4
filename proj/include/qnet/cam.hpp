#pragma once

#include <filesystem>
#include <vector>

#include "qnet/artifact.hpp"
#include "qnet/augment.hpp"
#include "qnet/backbone.hpp"

namespace qnet {

struct CamMap {
  Tensor<float> features;  // h x w, sum_k w_kc f_k before upsampling
  Tensor<float> raw;       // H x W, bilinear upsample of `features`
  Tensor<float> map;       // H x W, min-max normalized raw (all zeros if raw is constant)
  std::size_t class_index = 0;
  std::size_t argmax_row = 0, argmax_col = 0;  // of `map`, first in row-major order
};

/// h x w -> H x W with half-pixel centers and edge clamping (align_corners = false).
Tensor<float> upsample_bilinear(const Tensor<float>& m, std::size_t H, std::size_t W);

/// Maps to [0,1]; a constant input becomes all zeros.
Tensor<float> minmax_normalize(const Tensor<float>& m);

/// CAM from pre-GAP feature maps (d x h x w) and a head weight matrix (classes x d).
CamMap cam_from_features(const Tensor<float>& features, const Tensor<float>& head_weight, std::size_t cls,
                         std::size_t H, std::size_t W);

/// CAMs of a batch of C x H x W inputs (all one size) through the stage-1 model.
std::vector<CamMap> compute_cams(ImageModel<float>& model, const std::vector<Slice>& inputs, std::size_t cls);
CamMap compute_cam(ImageModel<float>& model, const Slice& input, std::size_t cls);

/// Network input for a CAM plus the lesion bbox in that input's coordinates. Full mode uses the
/// whole frame at native resolution after the histogram stretch; bbox mode uses the test crop.
struct CamInput {
  Slice image;
  BBox bbox;
};
CamInput cam_input(const Slice& slice, const BBox& box, const AugmentConfig& test_cfg);

/// Writes <stem>.pgm (heat map), <stem>_overlay.pgm (heat over underlay channel 0) and
/// <stem>.csv (map values, one row per image row) with a meta sidecar. PGMs carry the meta as a comment.
void export_cam(const CamMap& cam, const Slice& underlay, const std::filesystem::path& stem, const ArtifactMeta& meta);

/// 8-bit P5 encoding of an H x W map in [0,1]; `comment` goes on one header line.
std::string encode_pgm(const Tensor<float>& m, const std::string& comment);

}  // namespace qnet
