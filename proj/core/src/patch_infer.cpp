#include "bpeq/patch_infer.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

namespace bpeq {

namespace {

std::string offset_text(const Index3& o) {
  return "(" + std::to_string(o[0]) + ", " + std::to_string(o[1]) + ", " + std::to_string(o[2]) + ")";
}

// Running per-voxel sum and count over the cropped (original) volume.
class StitchAccumulator {
 public:
  explicit StitchAccumulator(const TilingPlan& plan)
      : plan_(plan), sum_(static_cast<std::size_t>(voxel_count(plan.dims)), 0.0),
        count_(static_cast<std::size_t>(voxel_count(plan.dims)), 0) {}

  void add(const Index3& offset, const Patch& patch) {
    const Index3& p = plan_.patch_size;
    if (patch.size != p || static_cast<std::int64_t>(patch.values.size()) != voxel_count(p)) {
      throw InvalidArgument("prediction at " + offset_text(offset) + " does not match the patch size");
    }
    const Index3& d = plan_.dims;
    for (std::int64_t z = 0; z < p[2]; ++z) {
      const std::int64_t oz = offset[2] + z - plan_.pad_before[2];
      if (oz < 0 || oz >= d[2]) continue;
      for (std::int64_t y = 0; y < p[1]; ++y) {
        const std::int64_t oy = offset[1] + y - plan_.pad_before[1];
        if (oy < 0 || oy >= d[1]) continue;
        const float* src = patch.values.data() + p[0] * (y + p[1] * z);
        const std::int64_t row = d[0] * (oy + d[1] * oz);
        for (std::int64_t x = 0; x < p[0]; ++x) {
          const std::int64_t ox = offset[0] + x - plan_.pad_before[0];
          if (ox < 0 || ox >= d[0]) continue;
          sum_[static_cast<std::size_t>(row + ox)] += src[x];
          count_[static_cast<std::size_t>(row + ox)] += 1;
        }
      }
    }
  }

  Volume3D finish(const Geometry& geometry) const {
    if (geometry.dims != plan_.dims) {
      throw GeometryError("geometry mismatch: stitch target dims differ from the tiling plan");
    }
    std::vector<float> out(sum_.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (count_[i] == 0) {
        throw InvalidArgument("voxel not covered by any patch");
      }
      out[i] = static_cast<float>(sum_[i] / count_[i]);
    }
    return Volume3D(geometry, std::move(out));
  }

 private:
  const TilingPlan& plan_;
  std::vector<double> sum_;
  std::vector<std::int32_t> count_;
};

void check_prediction_values(const Patch& p, const Index3& offset, const Index3& expected_size) {
  if (p.size != expected_size || static_cast<std::int64_t>(p.values.size()) != voxel_count(expected_size)) {
    throw BackendError("backend output at patch " + offset_text(offset) + " has the wrong size");
  }
  for (float v : p.values) {
    if (!(v >= 0.0F && v <= 1.0F)) {
      throw BackendError("backend output at patch " + offset_text(offset) + " is outside [0, 1]");
    }
  }
}

}  // namespace

TilingPlan plan_tiling(const Index3& dims, const Index3& patch_size) {
  TilingPlan plan;
  plan.dims = dims;
  plan.patch_size = patch_size;
  std::array<std::vector<std::int64_t>, 3> axis_offsets;
  for (int a = 0; a < 3; ++a) {
    const std::int64_t d = dims[a];
    const std::int64_t p = patch_size[a];
    if (d < 1 || p < 1) {
      throw InvalidArgument("tiling needs dims >= 1 and patch size >= 1");
    }
    if (d <= p) {
      plan.padded_dims[a] = p;
      plan.pad_before[a] = (p - d) / 2;
      plan.counts[a] = 1;
      axis_offsets[a] = {0};
      continue;
    }
    plan.padded_dims[a] = d;
    plan.pad_before[a] = 0;
    const std::int64_t n = (d + p - 1) / p;
    plan.counts[a] = n;
    for (std::int64_t i = 0; i < n; ++i) {
      // round(i * (d - p) / (n - 1)), halves rounded up
      axis_offsets[a].push_back((2 * i * (d - p) + (n - 1)) / (2 * (n - 1)));
    }
  }
  for (std::int64_t oz : axis_offsets[2]) {
    for (std::int64_t oy : axis_offsets[1]) {
      for (std::int64_t ox : axis_offsets[0]) {
        plan.offsets.push_back({ox, oy, oz});
      }
    }
  }
  return plan;
}

Patch extract_patch(const Volume3D& vol, const TilingPlan& plan, const Index3& offset) {
  const Index3& p = plan.patch_size;
  const Index3& d = vol.dims();
  if (d != plan.dims) {
    throw GeometryError("geometry mismatch: volume dims differ from the tiling plan");
  }
  Patch out{p, std::vector<float>(static_cast<std::size_t>(voxel_count(p)), 0.0F)};
  const auto src = vol.voxels();
  for (std::int64_t z = 0; z < p[2]; ++z) {
    const std::int64_t oz = offset[2] + z - plan.pad_before[2];
    if (oz < 0 || oz >= d[2]) continue;
    for (std::int64_t y = 0; y < p[1]; ++y) {
      const std::int64_t oy = offset[1] + y - plan.pad_before[1];
      if (oy < 0 || oy >= d[1]) continue;
      float* dst = out.values.data() + p[0] * (y + p[1] * z);
      for (std::int64_t x = 0; x < p[0]; ++x) {
        const std::int64_t ox = offset[0] + x - plan.pad_before[0];
        if (ox < 0 || ox >= d[0]) continue;
        dst[x] = src[static_cast<std::size_t>(ox + d[0] * (oy + d[1] * oz))];
      }
    }
  }
  return out;
}

Volume3D stitch(std::span<const PatchPrediction> predictions, const TilingPlan& plan, const Geometry& geometry) {
  std::map<Index3, std::size_t> slot;
  for (std::size_t i = 0; i < plan.offsets.size(); ++i) {
    slot.emplace(plan.offsets[i], i);
  }
  std::vector<const PatchPrediction*> ordered(plan.offsets.size(), nullptr);
  for (const PatchPrediction& p : predictions) {
    const auto it = slot.find(p.offset);
    if (it == slot.end()) {
      throw InvalidArgument("extra prediction at unplanned offset " + offset_text(p.offset));
    }
    if (ordered[it->second] != nullptr) {
      throw InvalidArgument("duplicate prediction at offset " + offset_text(p.offset));
    }
    ordered[it->second] = &p;
  }
  StitchAccumulator acc(plan);
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    if (ordered[i] == nullptr) {
      throw InvalidArgument("missing prediction at offset " + offset_text(plan.offsets[i]));
    }
    acc.add(ordered[i]->offset, ordered[i]->patch);
  }
  return acc.finish(geometry);
}

std::vector<Volume3D> run_tiled(std::span<const Volume3D* const> channels, const ModelBackend& backend,
                                const TilingPlan& plan, int jobs) {
  if (channels.empty()) {
    throw InvalidArgument("run_tiled needs at least one input channel");
  }
  const Geometry& geometry = channels.front()->geometry();
  for (const Volume3D* c : channels) {
    require_same_lattice(c->geometry(), geometry, "backend input channels");
  }

  const std::size_t n_patches = plan.offsets.size();
  auto predict_one = [&](std::size_t i) {
    const Index3& off = plan.offsets[i];
    std::vector<Patch> in;
    in.reserve(channels.size());
    for (const Volume3D* c : channels) {
      in.push_back(extract_patch(*c, plan, off));
    }
    std::vector<Patch> out;
    try {
      out = backend.predict(in);
    } catch (const std::exception& e) {
      throw BackendError("backend " + backend.describe() + " failed at patch " + offset_text(off) + ": " + e.what());
    }
    if (out.empty()) {
      throw BackendError("backend returned no channels at patch " + offset_text(off));
    }
    for (const Patch& p : out) {
      check_prediction_values(p, off, plan.patch_size);
    }
    return out;
  };

  std::vector<StitchAccumulator> acc;
  std::size_t n_out = 0;
  auto accumulate = [&](std::size_t i, const std::vector<Patch>& out) {
    if (acc.empty()) {
      n_out = out.size();
      for (std::size_t c = 0; c < n_out; ++c) acc.emplace_back(plan);
    } else if (out.size() != n_out) {
      throw BackendError("backend returned a varying number of channels (patch " + offset_text(plan.offsets[i]) + ")");
    }
    for (std::size_t c = 0; c < n_out; ++c) {
      acc[c].add(plan.offsets[i], out[c]);
    }
  };

  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || n_patches == 1) {
    for (std::size_t i = 0; i < n_patches; ++i) {
      accumulate(i, predict_one(i));
    }
  } else {
    // Results are folded in plan order through a reorder buffer so that the
    // floating-point sums match the sequential path exactly.
    std::vector<std::optional<std::vector<Patch>>> pending(n_patches);
    std::vector<std::exception_ptr> errors(n_patches);
    std::mutex mu;
    std::size_t next_fold = 0;
    std::atomic<std::size_t> next_task{0};
    std::exception_ptr fold_error;
    auto fold_ready = [&]() {
      while (next_fold < n_patches && (pending[next_fold] || errors[next_fold])) {
        if (errors[next_fold]) {
          if (!fold_error) fold_error = errors[next_fold];
          next_fold = n_patches;
          return;
        }
        if (!fold_error) {
          try {
            accumulate(next_fold, *pending[next_fold]);
          } catch (...) {
            fold_error = std::current_exception();
          }
        }
        pending[next_fold].reset();
        ++next_fold;
      }
    };
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < std::min(workers, n_patches); ++w) {
        pool.emplace_back([&]() {
          for (;;) {
            const std::size_t i = next_task.fetch_add(1);
            if (i >= n_patches) return;
            {
              std::lock_guard lock(mu);
              if (fold_error) return;
            }
            std::optional<std::vector<Patch>> result;
            std::exception_ptr err;
            try {
              result = predict_one(i);
            } catch (...) {
              err = std::current_exception();
            }
            std::lock_guard lock(mu);
            pending[i] = std::move(result);
            errors[i] = err;
            fold_ready();
          }
        });
      }
    }
    if (fold_error) {
      std::rethrow_exception(fold_error);
    }
  }

  std::vector<Volume3D> stitched;
  stitched.reserve(acc.size());
  for (const StitchAccumulator& a : acc) {
    stitched.push_back(a.finish(geometry));
  }
  return stitched;
}

DlSegmentation segment_dl(const Volume3D& pre, const ModelBackend& breast_backend,
                          const ModelBackend& fgt_vessel_backend, const PreprocParams& params,
                          const DlOptions& options) {
  params.validate();
  const Volume3D normalized = zscore_normalize(cap_intensities(pre, params.cap_low_pct, params.cap_high_pct));
  const TilingPlan plan = plan_tiling(pre.dims(), options.patch_size);

  const Volume3D* breast_in[] = {&normalized};
  std::vector<Volume3D> breast_out = run_tiled(breast_in, breast_backend, plan, options.jobs);
  Volume3D breast_prob = std::move(breast_out.front());
  Mask3D breast_mask = binarize_above(breast_prob, 0.5);

  const Volume3D* fgt_in[] = {&normalized, &breast_prob};
  std::vector<Volume3D> fv = run_tiled(fgt_in, fgt_vessel_backend, plan, options.jobs);
  if (fv.size() < 2) {
    throw BackendError("FGT/vessel backend must return two channels (FGT, vessel); got " + std::to_string(fv.size()));
  }
  Mask3D fgt_mask = mask_and(binarize_above(fv[0], 0.5), breast_mask);
  Mask3D vessel_mask = binarize_above(fv[1], 0.5);
  return DlSegmentation{std::move(breast_prob), std::move(fv[0]),    std::move(fv[1]),
                        std::move(breast_mask), std::move(fgt_mask), std::move(vessel_mask)};
}

}  // namespace bpeq
