// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0

#include "pcl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#ifdef PCL_HAVE_OPENCV
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#endif

#include "pcl/error.hpp"

namespace pcl {

// ---------------------------------------------------------------------------
// StageStream

StageStream::StageStream(std::vector<DomainDataset> domains) : domains_(std::move(domains)) {
  for (std::size_t i = 0; i < domains_.size(); ++i) {
    for (const auto* split : {&domains_[i].train, &domains_[i].val, &domains_[i].test}) {
      for (const auto& s : *split) {
        if (s.domain != static_cast<int>(i)) {
          throw InputError("stage stream: dataset '" + domains_[i].name + "' at position " +
                           std::to_string(i) + " holds a sample tagged with domain " +
                           std::to_string(s.domain));
        }
      }
    }
  }
}

void StageStream::advance() {
  if (current_ + 1 >= static_cast<int>(domains_.size())) {
    throw ContractError("stage stream: no stage after " + std::to_string(current_));
  }
  ++current_;
}

StageView StageStream::open(int stage) const {
  if (stage != current_) {
    throw ContractError("stage stream: stage " + std::to_string(stage) +
                        " is not accessible while training stage " + std::to_string(current_));
  }
  const auto& d = domains_.at(static_cast<std::size_t>(stage));
  return {stage, d.train, d.val};
}

std::span<const Sample> StageStream::test_set(std::size_t task) const {
  return domains_.at(task).test;
}

// ---------------------------------------------------------------------------
// Synthetic generator

std::vector<double> class_proportions(std::span<const double> counts) {
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  if (counts.empty() || total <= 0.0) throw InputError("class proportions: counts must be positive");
  std::vector<double> out;
  for (double c : counts) {
    if (c < 0.0) throw InputError("class proportions: negative count");
    out.push_back(c / total);
  }
  return out;
}

DomainStyle domain_style(std::uint64_t seed, std::size_t domain, double shift_scale) {
  Rng rng = Rng(seed).split(0x5747'0000ULL + domain);
  DomainStyle s;
  for (std::size_t c = 0; c < 3; ++c) {
    s.gain[c] = 1.0 + shift_scale * rng.uniform(-0.5, 0.5);
    s.bias[c] = shift_scale * rng.uniform(-0.15, 0.15);
  }
  s.brightness = shift_scale * rng.uniform(-0.2, 0.2);
  s.noise = 0.02 + shift_scale * rng.uniform(0.0, 0.12);
  return s;
}

namespace {

constexpr std::array<double, 3> kBackgroundTint{0.85, 0.45, 0.25};
constexpr std::array<double, 3> kLesionColor{0.45, 0.45, 0.2};
constexpr std::array<double, 3> kBleedColor{-0.3, -0.25, -0.1};

double channel_weight(const std::array<double, 3>& rgb, std::size_t c, std::size_t channels) {
  if (channels == 1) return (rgb[0] + rgb[1] + rgb[2]) / 3.0;
  return rgb[c % 3];
}

void add_spot(std::vector<double>& plane, std::size_t size, double cy, double cx, double radius,
              double amplitude) {
  const double inv = 1.0 / (2.0 * radius * radius);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      plane[y * size + x] += amplitude * std::exp(-(dy * dy + dx * dx) * inv);
    }
}

// Largest-remainder apportionment of n over proportions.
std::vector<std::size_t> apportion(std::size_t n, const std::vector<double>& props) {
  std::vector<std::size_t> counts(props.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t c = 0; c < props.size(); ++c) {
    const double exact = props[c] * static_cast<double>(n);
    counts[c] = static_cast<std::size_t>(std::floor(exact));
    used += counts[c];
    rem.push_back({exact - std::floor(exact), c});
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t i = 0; used < n; ++i, ++used) ++counts[rem[i % rem.size()].second];
  return counts;
}

template <typename V>
void shuffle(std::vector<V>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

struct SplitSizes {
  std::size_t train, val, test;
};

SplitSizes split_sizes(std::size_t count, const SplitFractions& f) {
  const auto train = static_cast<std::size_t>(std::floor(count * f.train + 0.5));
  const auto val = std::min(count - std::min(train, count),
                            static_cast<std::size_t>(std::floor(count * f.val + 0.5)));
  const auto tr = std::min(train, count);
  return {tr, val, count - tr - val};
}

std::vector<double> proportions_for(const SynthConfig& cfg, std::size_t domain) {
  if (cfg.class_proportions.empty()) return std::vector<double>(cfg.num_classes, 1.0 / cfg.num_classes);
  const auto& row = cfg.class_proportions[domain % cfg.class_proportions.size()];
  if (row.size() != cfg.num_classes) {
    throw InputError("synth: class proportion row has " + std::to_string(row.size()) +
                     " entries for " + std::to_string(cfg.num_classes) + " classes");
  }
  return class_proportions(row);
}

DomainDataset build_dataset(std::string name, int domain, std::size_t n,
                            const std::vector<double>& props, const SynthConfig& cfg,
                            std::uint64_t seed, const DomainStyle* fixed_style, bool require_all) {
  DomainDataset ds;
  ds.name = std::move(name);
  ds.domain = domain;
  ds.fractions = cfg.fractions;
  const auto counts = apportion(n, props);
  const Rng base = Rng(seed).split(0xD0D0'0000ULL + static_cast<std::uint64_t>(domain + 1));
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const auto sizes = split_sizes(counts[c], cfg.fractions);
    if (require_all && (sizes.train == 0 || sizes.val == 0 || sizes.test == 0)) {
      throw InputError("synth: " + std::to_string(n) + " samples per domain leave class " +
                       std::to_string(c) + " missing from a split of '" + ds.name + "'");
    }
    for (std::size_t i = 0; i < counts[c]; ++i) {
      Rng rng = base.split((c << 32) | i);
      Sample s;
      s.label = static_cast<int>(c);
      s.domain = domain;
      s.image = render_canonical(s.label, cfg.image_size, cfg.channels, rng);
      DomainStyle style;
      if (fixed_style) {
        style = *fixed_style;
      } else {
        for (std::size_t k = 0; k < 3; ++k) {
          style.gain[k] = 1.0 + rng.uniform(-0.15, 0.15);
          style.bias[k] = rng.uniform(-0.05, 0.05);
        }
        style.brightness = rng.uniform(-0.05, 0.05);
        style.noise = rng.uniform(0.02, 0.05);
      }
      apply_style(s.image, style, rng);
      auto& split = i < sizes.train ? ds.train : (i < sizes.train + sizes.val ? ds.val : ds.test);
      split.push_back(std::move(s));
    }
  }
  Rng order = base.split(0xFFFF'FFFFULL);
  shuffle(ds.train, order);
  shuffle(ds.val, order);
  shuffle(ds.test, order);
  return ds;
}

}  // namespace

Image render_canonical(int label, std::size_t size, std::size_t channels, Rng& rng) {
  if (size < 8 || channels == 0) throw InputError("synth: image too small");
  const double two_pi = 2.0 * std::numbers::pi;
  // Smooth background texture shared by all classes.
  std::vector<double> texture(size * size);
  const double f1 = rng.uniform(0.5, 1.5), f2 = rng.uniform(0.5, 1.5);
  const double p1 = rng.uniform(0.0, two_pi), p2 = rng.uniform(0.0, two_pi);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double u = static_cast<double>(x) / size, v = static_cast<double>(y) / size;
      texture[y * size + x] = 0.6 + 0.15 * std::sin(two_pi * f1 * u + p1) * std::cos(two_pi * f2 * v + p2);
    }

  std::vector<double> lesions(size * size, 0.0), bleeds(size * size, 0.0);
  std::size_t spots = 0;
  double rmin = 1.2, rmax = 2.0;
  if (label == 1) {
    spots = 2 + rng.below(3);
  } else if (label >= 2) {
    spots = 7 + rng.below(6);
    rmin = 1.5;
    rmax = 2.5;
  }
  const double margin = 3.0, span = static_cast<double>(size) - 2.0 * margin;
  for (std::size_t s = 0; s < spots; ++s) {
    const double cy = margin + rng.uniform() * span, cx = margin + rng.uniform() * span;
    add_spot(lesions, size, cy, cx, rng.uniform(rmin, rmax), rng.uniform(0.7, 1.0));
  }
  if (label >= 2) {
    const double cy = margin + rng.uniform() * span, cx = margin + rng.uniform() * span;
    add_spot(bleeds, size, cy, cx, rng.uniform(3.0, 4.0), 1.0);
  }

  Image img;
  img.height = img.width = size;
  img.channels = channels;
  img.pixels.resize(size * size * channels);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t i = y * size + x;
        const double v = channel_weight(kBackgroundTint, c, channels) * texture[i] +
                         channel_weight(kLesionColor, c, channels) * lesions[i] +
                         channel_weight(kBleedColor, c, channels) * bleeds[i];
        img.at(y, x, c) = static_cast<float>(v);
      }
  return img;
}

void apply_style(Image& image, const DomainStyle& style, Rng& rng) {
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < image.channels; ++c) {
        const std::size_t k = image.channels == 1 ? 0 : c % 3;
        const double v = style.gain[k] * image.at(y, x, c) + style.bias[k] + style.brightness +
                         style.noise * rng.normal();
        image.at(y, x, c) = static_cast<float>(v);
      }
}

StageStream synth_stream(std::uint64_t seed, const SynthConfig& config) {
  if (config.domains < 2) throw InputError("synth: need at least two domains");
  if (config.samples_per_domain < 60) {
    throw InputError("synth: samples_per_domain " + std::to_string(config.samples_per_domain) +
                     " is below the minimum of 60");
  }
  std::vector<DomainDataset> domains;
  for (std::size_t d = 0; d < config.domains; ++d) {
    const auto style = domain_style(seed, d, config.shift_scale);
    domains.push_back(build_dataset("domain_" + std::to_string(d), static_cast<int>(d),
                                    config.samples_per_domain, proportions_for(config, d), config,
                                    seed, &style, true));
  }
  return StageStream(std::move(domains));
}

DomainDataset synth_pretrain_split(std::uint64_t seed, const SynthConfig& config) {
  const std::vector<double> uniform(config.num_classes, 1.0 / static_cast<double>(config.num_classes));
  return build_dataset("pretrain", -1, config.pretrain_samples, uniform, config,
                       seed ^ 0x9E37'79B9'7F4A'7C15ULL, nullptr, true);
}

// ---------------------------------------------------------------------------
// Augmentation

Image augment(const Image& image, Rng& rng) {
  Image out = image;
  const std::size_t h = image.height, w = image.width, ch = image.channels;
  auto remap = [&](auto&& source_of) {
    Image next = out;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const auto [sy, sx] = source_of(y, x);
        for (std::size_t c = 0; c < ch; ++c) next.at(y, x, c) = out.at(sy, sx, c);
      }
    out = std::move(next);
  };
  if (rng.bernoulli(0.5)) remap([&](std::size_t y, std::size_t x) { return std::pair{y, w - 1 - x}; });
  if (rng.bernoulli(0.5)) remap([&](std::size_t y, std::size_t x) { return std::pair{h - 1 - y, x}; });
  if (rng.bernoulli(0.5) && h == w) {
    const auto quarter_turns = 1 + rng.below(3);
    for (std::uint64_t k = 0; k < quarter_turns; ++k) {
      remap([&](std::size_t y, std::size_t x) { return std::pair{w - 1 - x, y}; });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Image files

void write_netpbm(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 1 && image.channels != 3) throw InputError("netpbm: 1 or 3 channels only");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("netpbm: cannot open " + path.string());
  os << (image.channels == 3 ? "P6" : "P5") << '\n' << image.width << ' ' << image.height << "\n255\n";
  for (float v : image.pixels) {
    const auto byte = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    os.put(static_cast<char>(byte));
  }
}

namespace {

Image convert_channels(const Image& src, std::size_t channels) {
  if (src.channels == channels) return src;
  Image out;
  out.height = src.height;
  out.width = src.width;
  out.channels = channels;
  out.pixels.resize(src.height * src.width * channels);
  for (std::size_t y = 0; y < src.height; ++y)
    for (std::size_t x = 0; x < src.width; ++x) {
      double lum = 0.0;
      for (std::size_t c = 0; c < src.channels; ++c) lum += src.at(y, x, c);
      lum /= static_cast<double>(src.channels);
      for (std::size_t c = 0; c < channels; ++c) {
        out.at(y, x, c) = src.channels == 1 ? src.at(y, x, 0)
                                            : (channels == 1 ? static_cast<float>(lum)
                                                             : src.at(y, x, std::min(c, src.channels - 1)));
      }
    }
  return out;
}

bool read_netpbm(const std::filesystem::path& path, Image& out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return false;
  std::string magic;
  is >> magic;
  if (magic != "P5" && magic != "P6") return false;
  auto next_int = [&](long& v) {
    is >> std::ws;
    while (is.peek() == '#') {
      std::string comment;
      std::getline(is, comment);
      is >> std::ws;
    }
    return static_cast<bool>(is >> v);
  };
  long w = 0, h = 0, maxval = 0;
  if (!next_int(w) || !next_int(h) || !next_int(maxval)) return false;
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) return false;
  is.get();
  const std::size_t ch = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> raw(static_cast<std::size_t>(w * h) * ch);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) return false;
  out.height = static_cast<std::size_t>(h);
  out.width = static_cast<std::size_t>(w);
  out.channels = ch;
  out.pixels.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out.pixels[i] = raw[i] / static_cast<float>(maxval);
  return true;
}

}  // namespace

bool read_image(const std::filesystem::path& path, std::size_t channels, Image& out) {
  Image decoded;
  if (!read_netpbm(path, decoded)) {
#ifdef PCL_HAVE_OPENCV
    const cv::Mat mat = cv::imread(path.string(), channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
    if (mat.empty()) return false;
    decoded.height = static_cast<std::size_t>(mat.rows);
    decoded.width = static_cast<std::size_t>(mat.cols);
    decoded.channels = static_cast<std::size_t>(mat.channels());
    decoded.pixels.resize(decoded.height * decoded.width * decoded.channels);
    for (int y = 0; y < mat.rows; ++y) {
      const auto* row = mat.ptr<unsigned char>(y);
      for (int x = 0; x < mat.cols; ++x)
        for (std::size_t c = 0; c < decoded.channels; ++c) {
          // OpenCV stores BGR.
          const std::size_t src = decoded.channels == 3 ? 2 - c : c;
          decoded.at(y, x, c) = row[x * decoded.channels + src] / 255.0f;
        }
    }
#else
    return false;
#endif
  }
  out = convert_channels(decoded, channels);
  return true;
}

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width) {
  if (image.height == height && image.width == width) return image;
  Image out;
  out.height = height;
  out.width = width;
  out.channels = image.channels;
  out.pixels.resize(height * width * image.channels);
  const double sy = static_cast<double>(image.height) / height;
  const double sx = static_cast<double>(image.width) / width;
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const auto y0 = static_cast<std::size_t>(fy);
    const auto y1 = std::min(y0 + 1, image.height - 1);
    const double ty = fy - y0;
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const auto x0 = static_cast<std::size_t>(fx);
      const auto x1 = std::min(x0 + 1, image.width - 1);
      const double tx = fx - x0;
      for (std::size_t c = 0; c < image.channels; ++c) {
        const double top = image.at(y0, x0, c) * (1 - tx) + image.at(y0, x1, c) * tx;
        const double bottom = image.at(y1, x0, c) * (1 - tx) + image.at(y1, x1, c) * tx;
        out.at(y, x, c) = static_cast<float>(top * (1 - ty) + bottom * ty);
      }
    }
  }
  return out;
}

IngestReport ingest_folder(const std::filesystem::path& root, std::size_t image_size,
                           std::size_t channels, std::size_t num_classes,
                           SplitFractions fractions, std::uint64_t seed, int domain) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw InputError("ingest: '" + root.string() + "' is not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());

  IngestReport report;
  report.dataset.name = root.filename().string();
  report.dataset.domain = domain;
  report.dataset.fractions = fractions;
  std::vector<std::vector<Sample>> by_class(num_classes);
  std::size_t decoded = 0;
  for (const auto& dir : class_dirs) {
    const auto name = dir.filename().string();
    std::size_t used = 0;
    int label = -1;
    try {
      label = std::stoi(name, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != name.size() || label < 0 || static_cast<std::size_t>(label) >= num_classes) {
      throw InputError("ingest: unknown class directory '" + name + "'");
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().filename().string().front() != '.') {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      Image img;
      if (!read_image(f, channels, img)) {
        ++report.skipped;
        continue;
      }
      Sample s;
      s.image = resize_bilinear(img, image_size, image_size);
      s.label = label;
      s.domain = domain;
      by_class[static_cast<std::size_t>(label)].push_back(std::move(s));
      ++decoded;
    }
  }
  if (decoded == 0) throw InputError("ingest: no decodable images under '" + root.string() + "'");

  Rng rng = Rng(seed).split(0x1A6E'0000ULL);
  for (auto& samples : by_class) {
    shuffle(samples, rng);
    const auto sizes = split_sizes(samples.size(), fractions);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      auto& split = i < sizes.train ? report.dataset.train
                                    : (i < sizes.train + sizes.val ? report.dataset.val
                                                                   : report.dataset.test);
      split.push_back(std::move(samples[i]));
    }
  }
  return report;
}

}  // namespace pcl
