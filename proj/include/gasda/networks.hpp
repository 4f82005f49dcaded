#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gasda/error.hpp"
#include "gasda/geometry.hpp"
#include "gasda/ops.hpp"
#include "gasda/rng.hpp"
#include "gasda/tensor.hpp"

namespace gasda::nets {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

enum class NetKind { kGenerator, kDiscriminator, kDepth };

// Architecture descriptor. `base` is the first-layer width; `depth` is the
// residual block count (generator), strided layer count (discriminator) or
// number of scales (depth net).
struct NetArch {
  NetKind kind = NetKind::kGenerator;
  std::size_t base = 16;
  std::size_t depth = 2;

  friend bool operator==(const NetArch&, const NetArch&) = default;

  std::string str() const {
    switch (kind) {
      case NetKind::kGenerator:
        return "generator base=" + std::to_string(base) + " blocks=" + std::to_string(depth);
      case NetKind::kDiscriminator:
        return "discriminator base=" + std::to_string(base) + " layers=" + std::to_string(depth);
      case NetKind::kDepth:
        return "depth base=" + std::to_string(base) + " scales=" + std::to_string(depth);
    }
    return {};
  }

  static NetArch parse(const std::string& text) {
    std::istringstream in(text);
    std::string kind, a, b;
    in >> kind >> a >> b;
    auto field = [&](const std::string& tok, const std::string& key) -> std::size_t {
      if (tok.rfind(key + "=", 0) != 0) throw ParseError("architecture: expected '" + key + "=' in '" + text + "'");
      const std::string num = tok.substr(key.size() + 1);
      if (num.empty() || num.find_first_not_of("0123456789") != std::string::npos) {
        throw ParseError("architecture: bad integer in '" + text + "'");
      }
      return std::stoul(num);
    };
    NetArch arch;
    if (kind == "generator") {
      arch = {NetKind::kGenerator, field(a, "base"), field(b, "blocks")};
    } else if (kind == "discriminator") {
      arch = {NetKind::kDiscriminator, field(a, "base"), field(b, "layers")};
    } else if (kind == "depth") {
      arch = {NetKind::kDepth, field(a, "base"), field(b, "scales")};
    } else {
      throw ParseError("architecture: unknown kind in '" + text + "'");
    }
    arch.validate();
    return arch;
  }

  void validate() const {
    if (base == 0) throw ConfigError("architecture: base width must be positive");
    if (kind == NetKind::kDiscriminator && depth == 0) throw ConfigError("discriminator: needs >= 1 strided layer");
    if (kind == NetKind::kDepth && (depth == 0 || depth > 6)) throw ConfigError("depth net: scales must be in 1..6");
  }
};

inline NetArch generator_arch(std::size_t base = 16, std::size_t blocks = 2) {
  return {NetKind::kGenerator, base, blocks};
}
inline NetArch discriminator_arch(std::size_t base = 16, std::size_t layers = 3) {
  return {NetKind::kDiscriminator, base, layers};
}
inline NetArch depth_arch(std::size_t base = 16, std::size_t scales = 4) { return {NetKind::kDepth, base, scales}; }

// Named parameters of one network, in construction order.
template <class T>
struct ParamSet {
  std::string name;
  NetArch arch;
  std::vector<std::pair<std::string, Tensor<T>>> params;

  const Tensor<T>& operator[](const std::string& key) const {
    for (const auto& [k, t] : params) {
      if (k == key) return t;
    }
    throw std::out_of_range("param set '" + name + "' has no parameter '" + key + "'");
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.second.numel();
    return n;
  }

  void set_requires_grad(bool on) {
    for (auto& p : params) p.second.set_requires_grad(on);
  }
  void zero_grad() {
    for (auto& p : params) p.second.zero_grad();
  }

  // Deep copy with fresh storage.
  ParamSet clone() const {
    ParamSet out{name, arch, {}};
    for (const auto& [k, t] : params) out.params.emplace_back(k, t.clone(t.requires_grad()));
    return out;
  }

  bool values_equal(const ParamSet& o) const {
    if (params.size() != o.params.size()) return false;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto a = params[i].second.values(), b = o.params[i].second.values();
      if (params[i].first != o.params[i].first || a.size() != b.size()) return false;
      if (std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) != 0) return false;
    }
    return true;
  }
};

template <class U, class T>
ParamSet<U> cast(const ParamSet<T>& p) {
  ParamSet<U> out{p.name, p.arch, {}};
  for (const auto& [k, t] : p.params) {
    std::vector<U> v(t.values().begin(), t.values().end());
    out.params.emplace_back(k, Tensor<U>::from(t.shape(), std::move(v), t.requires_grad()));
  }
  return out;
}

namespace detail {

inline constexpr double kInitStd = 0.02;

template <class T>
class Builder {
 public:
  Builder(ParamSet<T>& set, std::uint64_t seed) : set_(set), rng_(Rng::derive(seed, set.name)) {}

  void conv(const std::string& key, std::size_t cout, std::size_t cin, std::size_t k) {
    add(key + ".weight", Shape{cout, cin, k, k});
    set_.params.emplace_back(key + ".bias", Tensor<T>::zeros(Shape{1, cout, 1, 1}, true));
  }
  // Transposed-conv weights are laid out (Cin, Cout, K, K).
  void deconv(const std::string& key, std::size_t cin, std::size_t cout, std::size_t k) {
    add(key + ".weight", Shape{cin, cout, k, k});
    set_.params.emplace_back(key + ".bias", Tensor<T>::zeros(Shape{1, cout, 1, 1}, true));
  }

 private:
  void add(const std::string& key, Shape s) {
    std::vector<T> v(s.numel());
    for (T& x : v) x = static_cast<T>(rng_.normal(0.0, kInitStd));
    set_.params.emplace_back(key, Tensor<T>::from(s, std::move(v), true));
  }

  ParamSet<T>& set_;
  Rng rng_;
};

template <class T>
Tensor<T> conv(const ParamSet<T>& p, const std::string& key, const Tensor<T>& x, std::size_t stride, std::size_t pad) {
  return ops::conv2d(x, p[key + ".weight"], p[key + ".bias"], stride, pad);
}

template <class T>
Tensor<T> deconv(const ParamSet<T>& p, const std::string& key, const Tensor<T>& x) {
  return ops::conv_transpose2d(x, p[key + ".weight"], p[key + ".bias"], 2, 1);
}

template <class T>
Tensor<T> lrelu(const Tensor<T>& x) {
  return ops::leaky_relu(x, static_cast<T>(ops::kLeakySlope));
}

// Images enter every network as 2x - 1.
template <class T>
Tensor<T> center(const Tensor<T>& img) {
  return ops::add_scalar(ops::scale(img, T(2)), T(-1));
}

template <class T>
void require_kind(const ParamSet<T>& p, NetKind kind, const char* what) {
  if (p.arch.kind != kind) throw ShapeError(std::string(what) + ": parameter set '" + p.name + "' is a " + p.arch.str());
}

inline std::size_t depth_width(const NetArch& a, std::size_t level) {
  return a.base * std::min<std::size_t>(std::size_t{1} << level, 4);
}

}  // namespace detail

// ------------------------------------------------------------- generator

// Encoder (7x7, two stride-2 3x3), residual blocks at 1/4 resolution, two
// stride-2 transposed convs, and a 7x7 head over the decoded features
// concatenated with the input image, followed by tanh.
template <class T>
ParamSet<T> build_generator(const std::string& name, const NetArch& arch, std::uint64_t seed) {
  detail::require_kind(ParamSet<T>{name, arch, {}}, NetKind::kGenerator, "build_generator");
  arch.validate();
  ParamSet<T> p{name, arch, {}};
  detail::Builder<T> b(p, seed);
  const std::size_t c = arch.base;
  b.conv("enc0", c, 3, 7);
  b.conv("enc1", 2 * c, c, 3);
  b.conv("enc2", 4 * c, 2 * c, 3);
  for (std::size_t i = 0; i < arch.depth; ++i) {
    b.conv("res" + std::to_string(i) + ".a", 4 * c, 4 * c, 3);
    b.conv("res" + std::to_string(i) + ".b", 4 * c, 4 * c, 3);
  }
  b.deconv("dec1", 4 * c, 2 * c, 4);
  b.deconv("dec0", 2 * c, c, 4);
  b.conv("head", 3, c + 3, 7);
  return p;
}

// Raw generator output in [-1, 1], same shape as `img`.
template <class T>
Tensor<T> run_generator(const ParamSet<T>& p, const Tensor<T>& img) {
  detail::require_kind(p, NetKind::kGenerator, "run_generator");
  const Shape s = img.shape();
  if (s.c != 3) throw ShapeError("run_generator: expected 3 channels, got " + s.str());
  if (s.h % 4 != 0 || s.w % 4 != 0 || s.h == 0 || s.w == 0) {
    throw ShapeError("run_generator: spatial dims must be divisible by 4, got " + s.str());
  }
  using detail::conv;
  using detail::lrelu;
  const Tensor<T> x = detail::center(img);
  Tensor<T> h = lrelu(conv(p, "enc0", x, 1, 3));
  h = lrelu(conv(p, "enc1", h, 2, 1));
  h = lrelu(conv(p, "enc2", h, 2, 1));
  for (std::size_t i = 0; i < p.arch.depth; ++i) {
    const std::string key = "res" + std::to_string(i);
    h = ops::add(h, conv(p, key + ".b", lrelu(conv(p, key + ".a", h, 1, 1)), 1, 1));
  }
  h = lrelu(detail::deconv(p, "dec1", h));
  h = lrelu(detail::deconv(p, "dec0", h));
  return ops::tanh(conv(p, "head", ops::concat_channels<T>({h, x}), 1, 3));
}

// Translated image in [0, 1].
template <class T>
Tensor<T> translate(const ParamSet<T>& p, const Tensor<T>& img) {
  return ops::scale(ops::add_scalar(run_generator(p, img), T(1)), T(0.5));
}

// --------------------------------------------------------- discriminator

// PatchGAN: `depth` stride-2 4x4 convs doubling width (capped at 8x), then a
// 3x3 single-channel score head.
template <class T>
ParamSet<T> build_discriminator(const std::string& name, const NetArch& arch, std::uint64_t seed) {
  detail::require_kind(ParamSet<T>{name, arch, {}}, NetKind::kDiscriminator, "build_discriminator");
  arch.validate();
  ParamSet<T> p{name, arch, {}};
  detail::Builder<T> b(p, seed);
  std::size_t cin = 3;
  for (std::size_t i = 0; i < arch.depth; ++i) {
    const std::size_t cout = arch.base * std::min<std::size_t>(std::size_t{1} << i, 8);
    b.conv("layer" + std::to_string(i), cout, cin, 4);
    cin = cout;
  }
  b.conv("score", 1, cin, 3);
  return p;
}

template <class T>
Tensor<T> run_discriminator(const ParamSet<T>& p, const Tensor<T>& img) {
  detail::require_kind(p, NetKind::kDiscriminator, "run_discriminator");
  const Shape s = img.shape();
  const std::size_t need = std::size_t{2} << p.arch.depth;
  if (s.c != 3) throw ShapeError("run_discriminator: expected 3 channels, got " + s.str());
  if (s.h < need || s.w < need) {
    throw ShapeError("run_discriminator: input " + s.str() + " smaller than receptive field " + std::to_string(need));
  }
  Tensor<T> h = detail::center(img);
  for (std::size_t i = 0; i < p.arch.depth; ++i) h = detail::lrelu(detail::conv(p, "layer" + std::to_string(i), h, 2, 1));
  return detail::conv(p, "score", h, 1, 1);
}

// ------------------------------------------------------------ depth net

// U-Net: a 3x3 stem, `scales - 1` stride-2 encoder stages, a bottleneck,
// and a decoder that upsamples, concatenates the encoder skip and refines.
// Every decoder level carries a bounded depth head (side output).
template <class T>
ParamSet<T> build_depth_net(const std::string& name, const NetArch& arch, std::uint64_t seed) {
  detail::require_kind(ParamSet<T>{name, arch, {}}, NetKind::kDepth, "build_depth_net");
  arch.validate();
  ParamSet<T> p{name, arch, {}};
  detail::Builder<T> b(p, seed);
  const std::size_t levels = arch.depth;
  b.conv("enc0", detail::depth_width(arch, 0), 3, 3);
  for (std::size_t l = 1; l < levels; ++l) {
    b.conv("enc" + std::to_string(l), detail::depth_width(arch, l), detail::depth_width(arch, l - 1), 3);
  }
  const std::size_t deepest = detail::depth_width(arch, levels - 1);
  b.conv("bottleneck", deepest, deepest, 3);
  for (std::size_t l = levels - 1; l-- > 0;) {
    b.conv("dec" + std::to_string(l), detail::depth_width(arch, l),
           detail::depth_width(arch, l + 1) + detail::depth_width(arch, l), 3);
  }
  for (std::size_t l = 0; l < levels; ++l) b.conv("head" + std::to_string(l), 1, detail::depth_width(arch, l), 3);
  return p;
}

// Depth maps in meters at scales 1, 1/2, ..., full resolution first.
template <class T>
std::vector<Tensor<T>> run_depth_net(const ParamSet<T>& p, const Tensor<T>& img) {
  detail::require_kind(p, NetKind::kDepth, "run_depth_net");
  const Shape s = img.shape();
  const std::size_t levels = p.arch.depth;
  const std::size_t unit = std::size_t{1} << (levels - 1);
  if (s.c != 3) throw ShapeError("run_depth_net: expected 3 channels, got " + s.str());
  if (s.h == 0 || s.w == 0 || s.h % unit != 0 || s.w % unit != 0) {
    throw ShapeError("run_depth_net: spatial dims must be divisible by " + std::to_string(unit) + ", got " + s.str());
  }
  using detail::conv;
  using detail::lrelu;
  std::vector<Tensor<T>> skips;
  skips.push_back(lrelu(conv(p, "enc0", detail::center(img), 1, 1)));
  for (std::size_t l = 1; l < levels; ++l) skips.push_back(lrelu(conv(p, "enc" + std::to_string(l), skips.back(), 2, 1)));

  const T lo = static_cast<T>(geometry::kDepthMin), span = static_cast<T>(geometry::kDepthMax - geometry::kDepthMin);
  auto head = [&](std::size_t l, const Tensor<T>& f) {
    return ops::add_scalar(ops::scale(ops::sigmoid(conv(p, "head" + std::to_string(l), f, 1, 1)), span), lo);
  };
  std::vector<Tensor<T>> out(levels);
  Tensor<T> h = lrelu(conv(p, "bottleneck", skips[levels - 1], 1, 1));
  out[levels - 1] = head(levels - 1, h);
  for (std::size_t l = levels - 1; l-- > 0;) {
    h = lrelu(conv(p, "dec" + std::to_string(l), ops::concat_channels<T>({ops::upsample_nearest(h, 2), skips[l]}), 1, 1));
    out[l] = head(l, h);
  }
  return out;
}

// Build a network of any kind from its descriptor.
template <class T>
ParamSet<T> build(const std::string& name, const NetArch& arch, std::uint64_t seed) {
  switch (arch.kind) {
    case NetKind::kGenerator:
      return build_generator<T>(name, arch, seed);
    case NetKind::kDiscriminator:
      return build_discriminator<T>(name, arch, seed);
    case NetKind::kDepth:
      return build_depth_net<T>(name, arch, seed);
  }
  throw ConfigError("build: unknown network kind");
}

// ------------------------------------------------------------ checkpoint

inline constexpr char kCheckpointMagic[8] = {'G', 'A', 'S', 'D', 'A', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::string take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw ParseError(path_ + ": truncated " + what + " at byte offset " + std::to_string(pos_));
    }
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint32_t u32(const char* what) {
    const std::string b = take(4, what);
    std::uint32_t v;
    std::memcpy(&v, b.data(), 4);
    return v;
  }

  std::size_t offset() const { return pos_; }

 private:
  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Serializes parameter sets as: magic, u32 version, u32-length-prefixed
// descriptor text ("<name> <arch>" per line), then per tensor u32 name
// length, "<net>/<param>", four u32 dims and raw little-endian f32 values.
template <class T>
std::string encode_checkpoint(const std::vector<const ParamSet<T>*>& nets) {
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_u32(out, kCheckpointVersion);
  std::string desc;
  for (const auto* n : nets) desc += n->name + " " + n->arch.str() + "\n";
  detail::put_u32(out, static_cast<std::uint32_t>(desc.size()));
  out += desc;
  for (const auto* n : nets) {
    for (const auto& [key, t] : n->params) {
      const std::string full = n->name + "/" + key;
      detail::put_u32(out, static_cast<std::uint32_t>(full.size()));
      out += full;
      const Shape s = t.shape();
      for (const std::size_t d : {s.n, s.c, s.h, s.w}) detail::put_u32(out, static_cast<std::uint32_t>(d));
      for (const T v : t.values()) {
        const float f = static_cast<float>(v);
        char b[4];
        std::memcpy(b, &f, 4);
        out.append(b, 4);
      }
    }
  }
  return out;
}

template <class T>
std::vector<ParamSet<T>> decode_checkpoint(const std::string& bytes, const std::string& path) {
  detail::Reader r(bytes, path);
  if (r.take(sizeof kCheckpointMagic, "magic") != std::string(kCheckpointMagic, sizeof kCheckpointMagic)) {
    throw ParseError(path + ": not a checkpoint (bad magic at byte offset 0)");
  }
  if (const auto v = r.u32("version"); v != kCheckpointVersion) {
    throw ParseError(path + ": unsupported checkpoint version " + std::to_string(v));
  }
  const std::size_t desc_len = r.u32("descriptor length");
  std::istringstream desc(r.take(desc_len, "descriptor"));
  std::vector<ParamSet<T>> nets;
  std::map<std::string, std::size_t> index;
  for (std::string line; std::getline(desc, line);) {
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw ParseError(path + ": malformed descriptor line '" + line + "'");
    ParamSet<T> p{line.substr(0, sp), NetArch::parse(line.substr(sp + 1)), {}};
    index[p.name] = nets.size();
    nets.push_back(std::move(p));
  }
  while (!r.done()) {
    const std::size_t at = r.offset();
    const std::string full = r.take(r.u32("tensor name length"), "tensor name");
    const auto slash = full.find('/');
    const auto it = slash == std::string::npos ? index.end() : index.find(full.substr(0, slash));
    if (it == index.end()) {
      throw ParseError(path + ": tensor '" + full + "' at byte offset " + std::to_string(at) + " names no network");
    }
    Shape s;
    s.n = r.u32("dims");
    s.c = r.u32("dims");
    s.h = r.u32("dims");
    s.w = r.u32("dims");
    const std::string raw = r.take(s.numel() * 4, "tensor payload");
    std::vector<T> v(s.numel());
    for (std::size_t i = 0; i < v.size(); ++i) {
      float f;
      std::memcpy(&f, raw.data() + 4 * i, 4);
      v[i] = static_cast<T>(f);
    }
    nets[it->second].params.emplace_back(full.substr(slash + 1), Tensor<T>::from(s, std::move(v), true));
  }
  // Every descriptor must match a freshly built layout.
  for (const auto& p : nets) {
    const ParamSet<T> ref = build<T>(p.name, p.arch, 0);
    if (ref.params.size() != p.params.size()) {
      throw ParseError(path + ": network '" + p.name + "' has " + std::to_string(p.params.size()) +
                       " tensors, architecture needs " + std::to_string(ref.params.size()));
    }
    for (std::size_t i = 0; i < ref.params.size(); ++i) {
      if (ref.params[i].first != p.params[i].first || ref.params[i].second.shape() != p.params[i].second.shape()) {
        throw ParseError(path + ": network '" + p.name + "' parameter '" + p.params[i].first +
                         "' does not match its architecture");
      }
    }
  }
  return nets;
}

template <class T>
void save_checkpoint(const std::string& path, const std::vector<const ParamSet<T>*>& nets) {
  const std::string bytes = encode_checkpoint(nets);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path + "'");
}

template <class T>
std::vector<ParamSet<T>> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint<T>(ss.str(), path);
}

template <class T>
const ParamSet<T>& find_net(const std::vector<ParamSet<T>>& nets, const std::string& name) {
  for (const auto& n : nets) {
    if (n.name == name) return n;
  }
  throw DataError("checkpoint holds no network '" + name + "'");
}

}  // namespace gasda::nets
