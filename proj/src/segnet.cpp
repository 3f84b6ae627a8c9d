#include "geoseg/segnet.hpp"

#include <cmath>

#include "geoseg/error.hpp"
#include "geoseg/rng.hpp"

namespace geoseg {
namespace {

Tensor he_uniform(Rng& rng, int cout, int cin, int k) {
  const double bound = std::sqrt(6.0 / (cin * k * k));
  std::vector<float> w(static_cast<std::size_t>(cout) * cin * k * k);
  for (auto& x : w) x = static_cast<float>(rng.uniform(-bound, bound));
  return Tensor::from({cout, cin, k, k}, std::move(w), true);
}

}  // namespace

void NetConfig::validate() const {
  if (levels < 1) throw ConfigError("net: levels must be >= 1");
  if (base_features < 2) throw ConfigError("net: base_features must be >= 2");
  if (num_classes < 2) throw ConfigError("net: num_classes must be >= 2");
  if (height <= 0 || width <= 0) throw ConfigError("net: input extents must be positive");
  const int div = 1 << (levels - 1);
  if (height % div || width % div)
    throw ConfigError("net: input " + std::to_string(height) + "x" + std::to_string(width) +
                      " not divisible by 2^(levels-1) = " + std::to_string(div));
}

Network Network::build(const NetConfig& config, std::uint64_t init_seed) {
  config.validate();
  Network net;
  net.config_ = config;
  Rng rng(init_seed);
  auto add_conv = [&](const std::string& name, int cout, int cin, int k) {
    net.params_.push_back({name + ".weight", he_uniform(rng, cout, cin, k)});
    net.params_.push_back({name + ".bias", Tensor::zeros({cout}, true)});
  };
  int in = 3;
  for (int l = 1; l <= config.levels; ++l) {
    const int w = config.width_at(l);
    add_conv("enc" + std::to_string(l) + ".conv1", w, in, 3);
    add_conv("enc" + std::to_string(l) + ".conv2", w, w, 3);
    in = w;
  }
  for (int l = config.levels - 1; l >= 1; --l) {
    const int w = config.width_at(l);
    add_conv("dec" + std::to_string(l) + ".up", w, config.width_at(l + 1), 3);
    add_conv("dec" + std::to_string(l) + ".conv1", w, 2 * w, 3);
    add_conv("dec" + std::to_string(l) + ".conv2", w, w, 3);
  }
  add_conv("head", config.num_classes, config.width_at(1), 1);
  return net;
}

const Tensor& Network::parameter(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.value;
  throw ConfigError("network has no parameter '" + name + "'");
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

Tensor Network::forward(Tape& tape, const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != config_.height ||
      images.dim(3) != config_.width)
    throw ShapeError("network expects [B,3," + std::to_string(config_.height) + "," +
                     std::to_string(config_.width) + "], got " + to_string(images.shape()));
  std::size_t next = 0;
  auto conv = [&](const Tensor& x) {
    const Tensor& w = params_[next++].value;
    const Tensor& b = params_[next++].value;
    return tape.conv2d(x, w, b, PadMode::reflect);
  };

  std::vector<Tensor> skips;
  Tensor x = images;
  for (int l = 1; l <= config_.levels; ++l) {
    x = tape.relu(conv(x));
    x = tape.relu(conv(x));
    if (l < config_.levels) {
      skips.push_back(x);
      x = tape.maxpool2(x);
    }
  }
  for (int l = config_.levels - 1; l >= 1; --l) {
    x = tape.relu(conv(tape.upsample_nn(x)));
    x = tape.concat_channels(skips[l - 1], x);
    x = tape.relu(conv(x));
    x = tape.relu(conv(x));
  }
  return tape.softmax_channels(conv(x));
}

Network Network::clone() const {
  Network copy;
  copy.config_ = config_;
  for (const auto& p : params_) copy.params_.push_back({p.name, p.value.clone(true)});
  return copy;
}

void Network::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

std::size_t expected_parameter_count(const NetConfig& c) {
  auto conv = [](std::size_t cout, std::size_t cin, std::size_t k) { return cout * cin * k * k + cout; };
  std::size_t n = 0;
  std::size_t in = 3;
  for (int l = 1; l <= c.levels; ++l) {
    const std::size_t w = c.width_at(l);
    n += conv(w, in, 3) + conv(w, w, 3);
    in = w;
  }
  for (int l = c.levels - 1; l >= 1; --l) {
    const std::size_t w = c.width_at(l);
    n += conv(w, c.width_at(l + 1), 3) + conv(w, 2 * w, 3) + conv(w, w, 3);
  }
  return n + conv(c.num_classes, c.width_at(1), 1);
}

Tensor image_tensor(const std::vector<const Frame*>& frames) {
  if (frames.empty()) throw ShapeError("image_tensor: empty batch");
  const int h = frames[0]->color.height, w = frames[0]->color.width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<float> data(frames.size() * 3 * plane);
  for (std::size_t b = 0; b < frames.size(); ++b) {
    const auto& img = frames[b]->color;
    if (img.width != w || img.height != h) throw ShapeError("image_tensor: mixed extents in batch");
    for (std::size_t p = 0; p < plane; ++p)
      for (int c = 0; c < 3; ++c)
        data[(b * 3 + c) * plane + p] = img.rgb[p * 3 + c] / 255.0f - 0.5f;
  }
  return Tensor::from({static_cast<int>(frames.size()), 3, h, w}, std::move(data));
}

LabelMap argmax_labels(const Tensor& probabilities, int index) {
  const int c = probabilities.dim(1), h = probabilities.dim(2), w = probabilities.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const float* base = probabilities.data().data() + static_cast<std::size_t>(index) * c * plane;
  LabelMap out(w, h);
  for (std::size_t p = 0; p < plane; ++p) {
    int best = 0;
    for (int k = 1; k < c; ++k)
      if (base[k * plane + p] > base[best * plane + p]) best = k;
    out.labels[p] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace geoseg
