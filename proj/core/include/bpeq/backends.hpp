#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "bpeq/patch_infer.hpp"

namespace bpeq {

// Returns one constant-valued patch per configured value.
class ConstantBackend final : public ModelBackend {
 public:
  explicit ConstantBackend(std::vector<float> values);
  std::vector<Patch> predict(std::span<const Patch> channels) const override;
  std::string describe() const override;

 private:
  std::vector<float> values_;
};

// Echoes input channel 0.
class IdentityBackend final : public ModelBackend {
 public:
  std::vector<Patch> predict(std::span<const Patch> channels) const override;
  std::string describe() const override { return "stub:identity"; }
};

// Channel 0 is 1 where input channel 0 exceeds `threshold`; the remaining
// `extra_channels` outputs are all zero.
class ThresholdBackend final : public ModelBackend {
 public:
  explicit ThresholdBackend(float threshold = 0.0F, int extra_channels = 1);
  std::vector<Patch> predict(std::span<const Patch> channels) const override;
  std::string describe() const override;

 private:
  float threshold_;
  int extra_channels_;
};

// Exchanges patches with an external command through the raw+JSON sidecar
// format: `cmd --in <dir> --out <dir>`, where each dir holds ch0.raw/json,
// ch1.raw/json, ... Exit status 0 is success.
class ExternalProcessBackend final : public ModelBackend {
 public:
  explicit ExternalProcessBackend(std::string command, std::filesystem::path scratch_root = {});
  std::vector<Patch> predict(std::span<const Patch> channels) const override;
  std::string describe() const override { return "command:" + command_; }

 private:
  std::string command_;
  std::filesystem::path scratch_root_;
};

// Parses a backend specification:
//   stub:constant:<v0>[,<v1>...]   stub:identity   stub:threshold[:<t>]
//   command:<shell command>        (anything else is treated as a command)
std::unique_ptr<ModelBackend> make_backend(const std::string& spec);

}  // namespace bpeq
