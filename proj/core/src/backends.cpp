#include "bpeq/backends.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <sstream>
#include <string_view>

#include "bpeq/volume_io.hpp"

namespace bpeq {

namespace fs = std::filesystem;

namespace {

Index3 require_input(std::span<const Patch> channels) {
  if (channels.empty()) {
    throw BackendError("no input channels");
  }
  return channels.front().size;
}

std::string format_float(float v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

ConstantBackend::ConstantBackend(std::vector<float> values) : values_(std::move(values)) {
  if (values_.empty()) {
    throw InvalidArgument("constant backend needs at least one output value");
  }
  for (float v : values_) {
    if (!(v >= 0.0F && v <= 1.0F)) {
      throw InvalidArgument("constant backend values must lie in [0, 1]");
    }
  }
}

std::vector<Patch> ConstantBackend::predict(std::span<const Patch> channels) const {
  const Index3 size = require_input(channels);
  std::vector<Patch> out;
  for (float v : values_) {
    out.push_back({size, std::vector<float>(static_cast<std::size_t>(voxel_count(size)), v)});
  }
  return out;
}

std::string ConstantBackend::describe() const {
  std::string s = "stub:constant:";
  for (std::size_t i = 0; i < values_.size(); ++i) {
    s += (i ? "," : "") + format_float(values_[i]);
  }
  return s;
}

std::vector<Patch> IdentityBackend::predict(std::span<const Patch> channels) const {
  require_input(channels);
  return {channels.front()};
}

ThresholdBackend::ThresholdBackend(float threshold, int extra_channels)
    : threshold_(threshold), extra_channels_(extra_channels) {
  if (extra_channels < 0) {
    throw InvalidArgument("extra_channels must be >= 0");
  }
}

std::vector<Patch> ThresholdBackend::predict(std::span<const Patch> channels) const {
  const Index3 size = require_input(channels);
  Patch hit{size, std::vector<float>(channels.front().values.size())};
  for (std::size_t i = 0; i < hit.values.size(); ++i) {
    hit.values[i] = channels.front().values[i] > threshold_ ? 1.0F : 0.0F;
  }
  std::vector<Patch> out{std::move(hit)};
  for (int c = 0; c < extra_channels_; ++c) {
    out.push_back({size, std::vector<float>(static_cast<std::size_t>(voxel_count(size)), 0.0F)});
  }
  return out;
}

std::string ThresholdBackend::describe() const { return "stub:threshold:" + format_float(threshold_); }

ExternalProcessBackend::ExternalProcessBackend(std::string command, fs::path scratch_root)
    : command_(std::move(command)), scratch_root_(std::move(scratch_root)) {
  if (command_.empty()) {
    throw InvalidArgument("external backend command is empty");
  }
  if (scratch_root_.empty()) {
    scratch_root_ = fs::temp_directory_path();
  }
}

std::vector<Patch> ExternalProcessBackend::predict(std::span<const Patch> channels) const {
  const Index3 size = require_input(channels);
  fs::create_directories(scratch_root_);
  std::string tmpl = (scratch_root_ / "bpeq-backend-XXXXXX").string();
  if (::mkdtemp(tmpl.data()) == nullptr) {
    throw BackendError("cannot create scratch directory under " + scratch_root_.string());
  }
  const fs::path work(tmpl);
  const fs::path in_dir = work / "in";
  const fs::path out_dir = work / "out";
  struct Cleanup {
    fs::path p;
    ~Cleanup() {
      std::error_code ec;
      fs::remove_all(p, ec);
    }
  } cleanup{work};
  fs::create_directories(in_dir);
  fs::create_directories(out_dir);

  for (std::size_t c = 0; c < channels.size(); ++c) {
    Geometry g;
    g.dims = channels[c].size;
    write_volume(Volume3D(g, channels[c].values), in_dir / ("ch" + std::to_string(c) + ".json"));
  }
  const std::string cmd = command_ + " --in '" + in_dir.string() + "' --out '" + out_dir.string() + "'";
  const int status = std::system(cmd.c_str());
  if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    const int code = (status != -1 && WIFEXITED(status)) ? WEXITSTATUS(status) : -1;
    throw BackendError("external backend exited with status " + std::to_string(code));
  }

  std::vector<Patch> out;
  for (int c = 0;; ++c) {
    const fs::path meta = out_dir / ("ch" + std::to_string(c) + ".json");
    if (!fs::exists(meta)) break;
    Volume3D v = read_volume(meta);
    if (v.dims() != size) {
      throw BackendError("external backend output ch" + std::to_string(c) + " has the wrong dims");
    }
    out.push_back({size, std::move(v).take_voxels()});
  }
  if (out.empty()) {
    throw BackendError("external backend wrote no output channels");
  }
  return out;
}

std::unique_ptr<ModelBackend> make_backend(const std::string& spec) {
  constexpr std::string_view kConstant = "stub:constant:";
  constexpr std::string_view kThreshold = "stub:threshold";
  constexpr std::string_view kCommand = "command:";
  const std::string_view s(spec);
  if (s.starts_with(kConstant)) {
    std::vector<float> values;
    std::stringstream ss(std::string(s.substr(kConstant.size())));
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        values.push_back(std::stof(item));
      } catch (const std::exception&) {
        throw InvalidArgument("bad constant backend value \"" + item + "\"");
      }
    }
    return std::make_unique<ConstantBackend>(std::move(values));
  }
  if (s == "stub:identity") {
    return std::make_unique<IdentityBackend>();
  }
  if (s.starts_with(kThreshold)) {
    float t = 0.0F;
    if (s.size() > kThreshold.size()) {
      if (s[kThreshold.size()] != ':') {
        throw InvalidArgument("bad backend spec \"" + spec + "\"");
      }
      t = std::stof(std::string(s.substr(kThreshold.size() + 1)));
    }
    return std::make_unique<ThresholdBackend>(t);
  }
  if (s.starts_with("stub:")) {
    throw InvalidArgument("unknown stub backend \"" + spec + "\"");
  }
  if (s.starts_with(kCommand)) {
    return std::make_unique<ExternalProcessBackend>(std::string(s.substr(kCommand.size())));
  }
  return std::make_unique<ExternalProcessBackend>(spec);
}

}  // namespace bpeq
