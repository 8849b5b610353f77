// Synthetic multi-domain liveness imagery.
//
// Construction: every sample starts from a low-frequency identity pattern
// (seeded blob layout shared across domains), gets deterministic local overlays
// for its attribute bits, and, when it is a spoof, a 3x3 box blur followed by
// an added high-frequency sinusoidal texture. The domain transform then applies
// a per-domain color tint, brightness offset, a per-sample color deviation, and
// Gaussian pixel noise, all scaled by domain_shift_strength.
//
// The liveness cues are deliberately split into a transferable part and
// domain-entangled parts. The blur precedes every spoof texture identically in
// all domains, so contrast statistics are the domain-invariant cue. The
// sinusoid's orientation and period are fixed per domain, and every domain
// pins its spoof samples' color deviation to a domain-specific cast axis while
// live samples deviate in per-sample random directions of the same length
// (think of every capture rig's replay pipeline aliasing and color-shifting
// its own way, against unbiased white-balance flicker on real captures). Both
// entangled cues are stronger and easier to fit than the blur inside any
// single domain, and both fail to transfer: the texture band is unseen on a
// held-out domain and the cast axis changes. The cast lives in exactly the
// channel-mean subspace a domain classifier keys on, which is what makes
// domain-confusing input perturbations an effective counter to shortcut
// learning.
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "dtda/common.hpp"
#include "json.hpp"

namespace dtda {

// Per-domain channel tint magnitude (times domain_shift_strength). Domains are
// coded with balanced-ternary channel levels, so any two domains differ in
// some channel mean by at least kDomainTintScale * strength; the brightness
// offset below is kept small enough to never cancel that gap.
inline constexpr double kDomainTintScale = 0.10;
inline constexpr double kDomainBrightnessScale = 0.015;
inline constexpr double kSpoofTextureAmplitude = 0.15;
// Magnitude of the per-sample color deviation (times strength), identical for
// both classes by construction: live samples get a white-balance flicker in a
// random direction, spoof samples a re-capture cast along their domain's fixed
// axis, both of this exact length. Deviation size therefore carries zero
// liveness information; only the directional consistency of the cast does, and
// a held-out domain pins its cast to an axis no source domain uses. Kept well
// under half of kDomainTintScale so averaging over a half-spoof domain can
// never erode the between-domain mean gap below the tint test's floor.
inline constexpr double kColorCastMagnitude = 0.04;
inline constexpr int kMaxDomains = 27;  // 3 channels x 3 tint levels

struct SynthSpec {
  int num_domains = 4;
  int samples_per_domain = 120;
  int image_size = 32;
  int channels = 3;
  int num_identities = 6;
  int num_attributes = 3;
  double spoof_ratio = 0.5;
  double domain_shift_strength = 1.0;
  double spoof_texture_amplitude = kSpoofTextureAmplitude;
  // Per-cue gain on the other two spoof signals. spoof_cast_scale blends the
  // spoof color deviation between a per-sample random direction (0, making
  // spoof color statistics identical to live) and the domain's fixed cast axis
  // (1, the nominal construction); the deviation magnitude never changes.
  // spoof_blur_scale interpolates the blur toward identity at 0. Neither knob
  // disturbs any random draw, so two datasets differing only in a scale are
  // pixel-comparable.
  double spoof_cast_scale = 1.0;
  double spoof_blur_scale = 1.0;
  uint64_t seed = 0;

  void validate() const {
    if (num_domains < 1 || num_domains > kMaxDomains)
      throw ConfigError("num_domains must be in [1, " + std::to_string(kMaxDomains) +
                        "], got " + std::to_string(num_domains));
    if (samples_per_domain < 1)
      throw ConfigError("samples_per_domain must be positive, got " +
                        std::to_string(samples_per_domain));
    if (image_size < 8)
      throw ConfigError("image_size must be at least 8, got " + std::to_string(image_size));
    if (channels != 3)
      throw ConfigError("channels must be 3, got " + std::to_string(channels));
    if (num_identities < 2)
      throw ConfigError("num_identities must be at least 2, got " +
                        std::to_string(num_identities));
    if (num_attributes < 1)
      throw ConfigError("num_attributes must be at least 1, got " +
                        std::to_string(num_attributes));
    if (!(spoof_ratio >= 0.0 && spoof_ratio <= 1.0))
      throw ConfigError("spoof_ratio must be in [0, 1], got " + format_double(spoof_ratio));
    if (!(domain_shift_strength >= 0.0))
      throw ConfigError("domain_shift_strength must be non-negative, got " +
                        format_double(domain_shift_strength));
    if (!(spoof_texture_amplitude >= 0.0 && spoof_texture_amplitude <= 1.0))
      throw ConfigError("spoof_texture_amplitude must be in [0, 1], got " +
                        format_double(spoof_texture_amplitude));
    if (!(spoof_cast_scale >= 0.0 && spoof_cast_scale <= 1.0))
      throw ConfigError("spoof_cast_scale must be in [0, 1], got " +
                        format_double(spoof_cast_scale));
    if (!(spoof_blur_scale >= 0.0 && spoof_blur_scale <= 2.0))
      throw ConfigError("spoof_blur_scale must be in [0, 2], got " +
                        format_double(spoof_blur_scale));
  }

  size_t pixels() const { return size_t(channels) * image_size * image_size; }
};

inline void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = nlohmann::json{{"num_domains", s.num_domains},
                     {"samples_per_domain", s.samples_per_domain},
                     {"image_size", s.image_size},
                     {"channels", s.channels},
                     {"num_identities", s.num_identities},
                     {"num_attributes", s.num_attributes},
                     {"spoof_ratio", s.spoof_ratio},
                     {"domain_shift_strength", s.domain_shift_strength},
                     {"spoof_texture_amplitude", s.spoof_texture_amplitude},
                     {"spoof_cast_scale", s.spoof_cast_scale},
                     {"spoof_blur_scale", s.spoof_blur_scale},
                     {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SynthSpec& s) {
  SynthSpec d;
  s.num_domains = j.value("num_domains", d.num_domains);
  s.samples_per_domain = j.value("samples_per_domain", d.samples_per_domain);
  s.image_size = j.value("image_size", d.image_size);
  s.channels = j.value("channels", d.channels);
  s.num_identities = j.value("num_identities", d.num_identities);
  s.num_attributes = j.value("num_attributes", d.num_attributes);
  s.spoof_ratio = j.value("spoof_ratio", d.spoof_ratio);
  s.domain_shift_strength = j.value("domain_shift_strength", d.domain_shift_strength);
  s.spoof_texture_amplitude = j.value("spoof_texture_amplitude", d.spoof_texture_amplitude);
  s.spoof_cast_scale = j.value("spoof_cast_scale", d.spoof_cast_scale);
  s.spoof_blur_scale = j.value("spoof_blur_scale", d.spoof_blur_scale);
  s.seed = j.value("seed", d.seed);
}

struct Sample {
  std::vector<float> image;  // channels * size * size, values in [0, 1]
  int liveness = 1;          // 1 = live, 0 = spoof
  int domain_id = 0;
  int identity_id = 0;
  std::vector<uint8_t> attributes;
  std::string id;
};

struct Dataset {
  SynthSpec spec;
  std::vector<Sample> samples;

  size_t size() const { return samples.size(); }

  Dataset filter_domains(const std::vector<int>& domains) const {
    Dataset out;
    out.spec = spec;
    for (const auto& s : samples) {
      if (std::find(domains.begin(), domains.end(), s.domain_id) != domains.end())
        out.samples.push_back(s);
    }
    return out;
  }

  std::vector<int> domain_ids() const {
    std::vector<int> ids;
    for (const auto& s : samples) {
      if (std::find(ids.begin(), ids.end(), s.domain_id) == ids.end())
        ids.push_back(s.domain_id);
    }
    std::sort(ids.begin(), ids.end());
    return ids;
  }
};

namespace detail {

// Balanced-ternary channel level in {-1, 0, +1} for domain d.
inline int tint_level(int domain, int channel) {
  int v = domain;
  for (int c = 0; c < channel; ++c) v /= 3;
  return v % 3 - 1;
}

struct DomainTransform {
  double tint[3];
  double brightness;
  double noise_sigma;
  double cast_axis[3];  // unit direction of the spoof color cast
};

// One axis per antipodal vertex pair of the icosahedron: any two meet at
// |cos| = 1/sqrt(5), so the first six domains get pairwise well-separated
// cast directions and a detector matched to some domains' axes reads mostly
// noise on another. Components are 0.52573111... = 1/sqrt(1+phi^2) and
// 0.85065080... = phi/sqrt(1+phi^2) for the golden ratio phi.
inline constexpr double kCastAxes[6][3] = {
    {0.0, 0.525731112119133606, 0.850650808352039932},
    {0.0, 0.525731112119133606, -0.850650808352039932},
    {0.525731112119133606, 0.850650808352039932, 0.0},
    {0.525731112119133606, -0.850650808352039932, 0.0},
    {0.850650808352039932, 0.0, 0.525731112119133606},
    {0.850650808352039932, 0.0, -0.525731112119133606},
};

inline DomainTransform domain_transform(const SynthSpec& spec, int d) {
  Rng rng(derive_seed(spec.seed, "domain", uint64_t(d)));
  DomainTransform t;
  double k = spec.domain_shift_strength;
  for (int c = 0; c < 3; ++c) t.tint[c] = kDomainTintScale * k * tint_level(d, c);
  t.brightness = kDomainBrightnessScale * k * rng.uniform(-1.0, 1.0);
  t.noise_sigma = k * (0.01 + 0.03 * rng.uniform());
  if (d < 6) {
    for (int c = 0; c < 3; ++c) t.cast_axis[c] = kCastAxes[d][c];
  } else {
    // Past the codebook, fall back to a random axis; separation from the
    // other domains is no longer guaranteed there.
    double norm2 = 0.0;
    for (int c = 0; c < 3; ++c) {
      t.cast_axis[c] = rng.normal();
      norm2 += t.cast_axis[c] * t.cast_axis[c];
    }
    double inv = norm2 > 1e-24 ? 1.0 / std::sqrt(norm2) : 0.0;
    for (int c = 0; c < 3; ++c)
      t.cast_axis[c] = inv > 0.0 ? t.cast_axis[c] * inv : kCastAxes[0][c];
  }
  return t;
}

// Low-frequency blob layout, shared across domains for a given identity.
inline std::vector<double> identity_base(const SynthSpec& spec, int identity) {
  const int n = spec.image_size;
  Rng rng(derive_seed(spec.seed, "identity", uint64_t(identity)));
  std::vector<double> img(spec.pixels(), 0.30);
  int blobs = 3 + rng.uniform_int(2);
  for (int b = 0; b < blobs; ++b) {
    double cy = rng.uniform(0.15, 0.85) * n;
    double cx = rng.uniform(0.15, 0.85) * n;
    double sigma = rng.uniform(0.10, 0.22) * n;
    double amp = rng.uniform(0.25, 0.45);
    double wc[3] = {rng.uniform(0.7, 1.0), rng.uniform(0.7, 1.0), rng.uniform(0.7, 1.0)};
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        double g = amp * std::exp(-d2 / (2.0 * sigma * sigma));
        for (int c = 0; c < 3; ++c) img[size_t(c) * n * n + size_t(y) * n + x] += wc[c] * g;
      }
    }
  }
  return img;
}

struct AttributePattern {
  int y0, y1, x0, x1;  // inclusive box
  int channel;
  bool outline;
  double delta;
};

inline AttributePattern attribute_pattern(const SynthSpec& spec, int k) {
  const int n = spec.image_size;
  Rng rng(derive_seed(spec.seed, "attribute", uint64_t(k)));
  AttributePattern p;
  int hy = std::max(1, int(rng.uniform(0.15, 0.30) * n));
  int hx = std::max(1, int(rng.uniform(0.15, 0.30) * n));
  int cy = int(rng.uniform(0.25, 0.75) * n);
  int cx = int(rng.uniform(0.25, 0.75) * n);
  p.y0 = std::clamp(cy - hy, 0, n - 1);
  p.y1 = std::clamp(cy + hy, 0, n - 1);
  p.x0 = std::clamp(cx - hx, 0, n - 1);
  p.x1 = std::clamp(cx + hx, 0, n - 1);
  p.channel = k % 3;
  p.outline = (k / 3) % 2 == 1;
  p.delta = 0.22;
  return p;
}

// Signed contrast patch: brightens one channel and darkens the next inside
// the rectangle. The opposing sign keeps the pattern visible after clamping
// and makes it orthogonal to the per-domain tint, which moves whole channels.
inline void apply_attribute(std::vector<double>& img, const AttributePattern& p, int n) {
  double* up = img.data() + size_t(p.channel) * n * n;
  double* down = img.data() + size_t((p.channel + 1) % 3) * n * n;
  for (int y = p.y0; y <= p.y1; ++y) {
    for (int x = p.x0; x <= p.x1; ++x) {
      if (p.outline && y != p.y0 && y != p.y1 && x != p.x0 && x != p.x1) continue;
      up[size_t(y) * n + x] += p.delta;
      down[size_t(y) * n + x] -= p.delta;
    }
  }
}

inline void box_blur_3x3(std::vector<double>& img, int channels, int n) {
  std::vector<double> src(size_t(n) * n);
  for (int c = 0; c < channels; ++c) {
    double* ch = img.data() + size_t(c) * n * n;
    std::copy(ch, ch + size_t(n) * n, src.begin());
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        double sum = 0.0;
        int cnt = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= n || xx < 0 || xx >= n) continue;
            sum += src[size_t(yy) * n + xx];
            ++cnt;
          }
        }
        ch[size_t(y) * n + x] = sum / cnt;
      }
    }
  }
}

// Spoof texture: additive sinusoid, identical across channels. Orientation
// and period are fixed per domain (every capture pipeline aliases its own
// way), only the phase varies per sample. A detector tuned to the source
// domains' bands has no reason to respond to an unseen domain's band; the
// blur that precedes the texture is the cue that carries across domains.
inline void apply_spoof_texture(std::vector<double>& img, int channels, int n, double amplitude,
                                int domain, Rng& rng) {
  static constexpr double kAngles[4] = {0.0, 0.25, 0.5, 0.75};  // times pi
  double theta = kAngles[domain % 4] * std::numbers::pi;
  int period = 3 + domain % 3;
  double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  double ux = std::cos(theta), uy = std::sin(theta);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      double v = amplitude *
                 std::sin(2.0 * std::numbers::pi * (x * ux + y * uy) / period + phase);
      for (int c = 0; c < channels; ++c) img[size_t(c) * n * n + size_t(y) * n + x] += v;
    }
  }
}

}  // namespace detail

inline Dataset synthesize(const SynthSpec& spec) {
  spec.validate();
  const int n = spec.image_size;
  Dataset ds;
  ds.spec = spec;

  std::vector<std::vector<double>> identities(size_t(spec.num_identities));
  for (int i = 0; i < spec.num_identities; ++i)
    identities[size_t(i)] = detail::identity_base(spec, i);
  std::vector<detail::AttributePattern> attrs(size_t(spec.num_attributes));
  for (int k = 0; k < spec.num_attributes; ++k)
    attrs[size_t(k)] = detail::attribute_pattern(spec, k);

  const long n_spoof = std::llround(spec.spoof_ratio * spec.samples_per_domain);
  for (int d = 0; d < spec.num_domains; ++d) {
    detail::DomainTransform tf = detail::domain_transform(spec, d);
    for (int i = 0; i < spec.samples_per_domain; ++i) {
      Rng rng(derive_seed(spec.seed, "sample",
                          uint64_t(d) * uint64_t(spec.samples_per_domain) + uint64_t(i)));
      Sample s;
      s.domain_id = d;
      s.liveness = i < n_spoof ? 0 : 1;
      s.identity_id = rng.uniform_int(spec.num_identities);
      s.attributes.resize(size_t(spec.num_attributes));
      for (auto& b : s.attributes) b = uint8_t(rng.uniform_int(2));
      s.id = "d" + std::to_string(d) + "_s" + std::to_string(i);

      std::vector<double> img = identities[size_t(s.identity_id)];
      for (int k = 0; k < spec.num_attributes; ++k)
        if (s.attributes[size_t(k)]) detail::apply_attribute(img, attrs[size_t(k)], n);
      if (s.liveness == 0) {
        if (spec.spoof_blur_scale == 1.0) {
          detail::box_blur_3x3(img, spec.channels, n);
        } else if (spec.spoof_blur_scale > 0.0) {
          std::vector<double> sharp = img;
          detail::box_blur_3x3(img, spec.channels, n);
          for (size_t p = 0; p < img.size(); ++p)
            img[p] = sharp[p] + spec.spoof_blur_scale * (img[p] - sharp[p]);
        }
        detail::apply_spoof_texture(img, spec.channels, n, spec.spoof_texture_amplitude, d,
                                    rng);
      }
      // Every sample deviates from its domain's color baseline by exactly
      // kColorCastMagnitude * strength: live along a fresh random direction,
      // spoof along the domain's cast axis (blended back toward the random
      // direction as spoof_cast_scale falls below 1). Equal lengths mean the
      // deviation size says nothing about liveness; only alignment with a
      // domain-consistent axis does.
      double dev[3];
      double norm2 = 0.0;
      for (int c = 0; c < spec.channels; ++c) {
        dev[c] = rng.normal();
        norm2 += dev[c] * dev[c];
      }
      double inv = norm2 > 1e-24 ? 1.0 / std::sqrt(norm2) : 0.0;
      for (int c = 0; c < spec.channels; ++c) dev[c] = inv > 0.0 ? dev[c] * inv : 0.0;
      if (s.liveness == 0) {
        double w[3];
        double wn2 = 0.0;
        for (int c = 0; c < spec.channels; ++c) {
          w[c] = (1.0 - spec.spoof_cast_scale) * dev[c] +
                 spec.spoof_cast_scale * tf.cast_axis[c];
          wn2 += w[c] * w[c];
        }
        if (wn2 > 1e-18) {
          double winv = 1.0 / std::sqrt(wn2);
          for (int c = 0; c < spec.channels; ++c) dev[c] = w[c] * winv;
        } else {
          for (int c = 0; c < spec.channels; ++c) dev[c] = tf.cast_axis[c];
        }
      }
      const double cast = kColorCastMagnitude * spec.domain_shift_strength;
      for (int c = 0; c < spec.channels; ++c) {
        double* ch = img.data() + size_t(c) * n * n;
        double shift = tf.tint[c] + tf.brightness + cast * dev[c];
        for (size_t p = 0; p < size_t(n) * n; ++p)
          ch[p] += shift + tf.noise_sigma * rng.normal();
      }
      s.image.resize(spec.pixels());
      for (size_t p = 0; p < spec.pixels(); ++p)
        s.image[p] = float(std::clamp(img[p], 0.0, 1.0));
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

// Stratified split by (domain_id, liveness): each cell contributes
// round(train_fraction * cell size) samples to the train side. Both sides keep
// the original sample order.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction,
                                         uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("train_fraction must be in (0, 1), got " + format_double(train_fraction));
  if (ds.samples.empty()) throw InputError("cannot split an empty dataset");

  std::vector<std::pair<long, std::vector<size_t>>> cells;  // key -> indices
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    long key = long(ds.samples[i].domain_id) * 2 + ds.samples[i].liveness;
    auto it = std::find_if(cells.begin(), cells.end(),
                           [&](auto& c) { return c.first == key; });
    if (it == cells.end()) {
      cells.push_back({key, {i}});
    } else {
      it->second.push_back(i);
    }
  }
  std::sort(cells.begin(), cells.end(), [](auto& a, auto& b) { return a.first < b.first; });

  Rng rng(derive_seed(seed, "split"));
  std::vector<char> in_train(ds.samples.size(), 0);
  for (auto& [key, idx] : cells) {
    shuffle(idx, rng);
    size_t n_train = size_t(std::llround(train_fraction * double(idx.size())));
    for (size_t j = 0; j < n_train; ++j) in_train[idx[j]] = 1;
  }
  Dataset train, test;
  train.spec = ds.spec;
  test.spec = ds.spec;
  for (size_t i = 0; i < ds.samples.size(); ++i)
    (in_train[i] ? train : test).samples.push_back(ds.samples[i]);
  return {std::move(train), std::move(test)};
}

// ---- on-disk format ----
// <dir>/manifest.json : generation spec echo plus per-sample labels
// <dir>/images.bin    : 20-byte header (magic "DTDA", u32 count, u32 channels,
//                       u32 height, u32 width, little-endian) followed by
//                       float32 pixel data in sample-major C order.

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  if (ds.samples.empty()) throw InputError("refusing to save an empty dataset");
  std::filesystem::create_directories(dir);

  nlohmann::json manifest;
  manifest["spec"] = ds.spec;
  nlohmann::json arr = nlohmann::json::array();
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    nlohmann::json js;
    js["index"] = i;
    js["id"] = s.id;
    js["liveness"] = s.liveness;
    js["domain_id"] = s.domain_id;
    js["identity_id"] = s.identity_id;
    js["attributes"] = s.attributes;
    arr.push_back(std::move(js));
  }
  manifest["samples"] = std::move(arr);
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");

  std::string blob;
  blob.reserve(20 + ds.samples.size() * ds.spec.pixels() * 4);
  blob += "DTDA";
  detail::put_u32(blob, uint32_t(ds.samples.size()));
  detail::put_u32(blob, uint32_t(ds.spec.channels));
  detail::put_u32(blob, uint32_t(ds.spec.image_size));
  detail::put_u32(blob, uint32_t(ds.spec.image_size));
  for (const auto& s : ds.samples) {
    blob.append(reinterpret_cast<const char*>(s.image.data()), s.image.size() * 4);
  }
  std::ofstream out(dir / "images.bin", std::ios::binary);
  if (!out) throw InputError("cannot write " + (dir / "images.bin").string());
  out.write(blob.data(), std::streamsize(blob.size()));
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  Dataset ds;
  try {
    ds.spec = manifest.at("spec").get<SynthSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest.json spec: " + std::string(e.what()));
  }
  ds.spec.validate();
  if (!manifest.contains("samples") || !manifest["samples"].is_array())
    throw FormatError("manifest.json: missing samples array");

  auto bytes = read_binary_file(dir / "images.bin");
  if (bytes.size() < 20 || std::memcmp(bytes.data(), "DTDA", 4) != 0)
    throw FormatError("images.bin: bad magic");
  uint32_t n = detail::get_u32(bytes.data() + 4);
  uint32_t c = detail::get_u32(bytes.data() + 8);
  uint32_t h = detail::get_u32(bytes.data() + 12);
  uint32_t w = detail::get_u32(bytes.data() + 16);
  if (n != manifest["samples"].size())
    throw FormatError("images.bin: tensor count " + std::to_string(n) +
                      " does not match manifest sample count " +
                      std::to_string(manifest["samples"].size()));
  if (int(c) != ds.spec.channels || int(h) != ds.spec.image_size || int(w) != ds.spec.image_size)
    throw FormatError("images.bin: tensor shape does not match manifest spec");
  size_t expect = 20 + size_t(n) * c * h * w * 4;
  if (bytes.size() != expect)
    throw FormatError("images.bin: truncated or padded (expected " + std::to_string(expect) +
                      " bytes, found " + std::to_string(bytes.size()) + ")");

  const unsigned char* p = bytes.data() + 20;
  for (const auto& js : manifest["samples"]) {
    Sample s;
    try {
      s.id = js.at("id").get<std::string>();
      s.liveness = js.at("liveness").get<int>();
      s.domain_id = js.at("domain_id").get<int>();
      s.identity_id = js.at("identity_id").get<int>();
      s.attributes = js.at("attributes").get<std::vector<uint8_t>>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("manifest.json sample entry: " + std::string(e.what()));
    }
    if (s.liveness != 0 && s.liveness != 1)
      throw FormatError("manifest.json: sample " + s.id + " has invalid liveness");
    s.image.resize(size_t(c) * h * w);
    std::memcpy(s.image.data(), p, s.image.size() * 4);
    p += s.image.size() * 4;
    for (float v : s.image) {
      if (!(v >= 0.0f && v <= 1.0f))
        throw FormatError("images.bin: pixel out of range for sample " + s.id);
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace dtda
