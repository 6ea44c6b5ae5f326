#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bpeq/preprocess.hpp"
#include "bpeq/volume.hpp"

namespace bpeq {

// Minimal-cover placement of fixed-size patches over a volume.
struct TilingPlan {
  Index3 dims{};         // original volume dims
  Index3 patch_size{96, 96, 96};
  Index3 padded_dims{};  // dims after zero-padding short axes up to patch_size
  Index3 pad_before{};   // low-side padding per axis
  Index3 counts{};       // patches per axis, ceil(dim / patch)
  std::vector<Index3> offsets;  // in padded coordinates, x-fastest order
};

// Per axis: ceil(dim/patch) patches, offsets evenly spaced from 0 to
// dim - patch (rounded half up), the last patch flush with the boundary.
// Axes shorter than the patch are zero-padded symmetrically (extra voxel on
// the high side).
TilingPlan plan_tiling(const Index3& dims, const Index3& patch_size = {96, 96, 96});

// A patch-sized scalar grid, x-fastest.
struct Patch {
  Index3 size{};
  std::vector<float> values;
};

struct PatchPrediction {
  Index3 offset{};
  Patch patch;
};

// Copies the patch at `offset` (padded coordinates); padding reads as 0.
Patch extract_patch(const Volume3D& vol, const TilingPlan& plan, const Index3& offset);

// Each output voxel is the mean of all patch predictions covering it, with
// padding cropped away. Sums are accumulated in plan order, so the result
// does not depend on the order of `predictions`. Throws InvalidArgument on
// missing, duplicate, or unplanned offsets.
Volume3D stitch(std::span<const PatchPrediction> predictions, const TilingPlan& plan, const Geometry& geometry);

// Executes a segmentation network on one patch. Implementations must be
// deterministic, return values in [0, 1], and be safe to call concurrently.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;
  virtual std::vector<Patch> predict(std::span<const Patch> channels) const = 0;
  virtual std::string describe() const = 0;
};

// Tiles each input channel with `plan`, runs the backend per patch
// (optionally on `jobs` threads), and stitches every output channel.
// Backend failures are rethrown as BackendError naming the patch offset.
std::vector<Volume3D> run_tiled(std::span<const Volume3D* const> channels, const ModelBackend& backend,
                                const TilingPlan& plan, int jobs = 1);

struct DlOptions {
  Index3 patch_size{96, 96, 96};
  int jobs = 1;
};

struct DlSegmentation {
  Volume3D breast_prob;
  Volume3D fgt_prob;
  Volume3D vessel_prob;
  Mask3D breast_mask;
  Mask3D fgt_mask;  // intersected with breast_mask
  Mask3D vessel_mask;
};

// cap -> z-score -> breast backend (1 channel in, breast probability out)
// -> FGT/vessel backend (normalised image + breast probability in, FGT and
// vessel probabilities out). Masks are probabilities > 0.5.
DlSegmentation segment_dl(const Volume3D& pre, const ModelBackend& breast_backend,
                          const ModelBackend& fgt_vessel_backend, const PreprocParams& params,
                          const DlOptions& options = {});

}  // namespace bpeq
