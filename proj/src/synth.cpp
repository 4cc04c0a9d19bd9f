#include "baryir/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "baryir/errors.hpp"
#include "baryir/rng.hpp"

namespace baryir::synth {

namespace {

using ad::Tensor;
using nlohmann::json;

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

uint64_t hash_tensor(const Tensor& t, uint64_t h) {
  return fnv1a64(t.data.data(), t.data.size() * sizeof(double), h);
}

}  // namespace

PatternKind pattern_from_string(const std::string& s) {
  if (s == "gradient") return PatternKind::gradient;
  if (s == "checker") return PatternKind::checker;
  if (s == "blobs") return PatternKind::blobs;
  throw InputError("unknown pattern kind '" + s + "'");
}

std::string to_string(PatternKind k) {
  switch (k) {
    case PatternKind::gradient: return "gradient";
    case PatternKind::checker: return "checker";
    case PatternKind::blobs: return "blobs";
  }
  return "?";
}

DegradationKind degradation_from_string(const std::string& s) {
  if (s == "gaussian_noise" || s == "noise") return DegradationKind::gaussian_noise;
  if (s == "box_blur" || s == "blur") return DegradationKind::box_blur;
  if (s == "gamma_dark" || s == "gamma") return DegradationKind::gamma_dark;
  if (s == "haze_mix" || s == "haze") return DegradationKind::haze_mix;
  throw InputError("unknown degradation kind '" + s + "'");
}

std::string to_string(DegradationKind k) {
  switch (k) {
    case DegradationKind::gaussian_noise: return "gaussian_noise";
    case DegradationKind::box_blur: return "box_blur";
    case DegradationKind::gamma_dark: return "gamma_dark";
    case DegradationKind::haze_mix: return "haze_mix";
  }
  return "?";
}

void SceneConfig::validate() const {
  if (image_size < 8) throw InputError("scene: image_size too small");
  if (sources.empty() || sources.size() != counts.size())
    throw InputError("scene: sources/counts mismatch");
  for (int c : counts)
    if (c < 1) throw InputError("scene: counts must be positive");
  for (const auto& s : sources)
    if (s.levels.empty()) throw InputError("scene: degradation needs at least one level");
}

std::string SceneManifest::to_json() const {
  json j;
  j["schema"] = 1;
  j["image_size"] = image_size;
  j["k_count"] = k_count;
  j["counts"] = counts;
  j["lambda"] = lambda;
  j["seed"] = seed;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(content_hash));
  j["content_hash"] = buf;
  return j.dump(2);
}

ad::Tensor sample_gaussian_source(const oracle::GaussianSpec& spec, int n, uint64_t seed) {
  spec.validate();
  if (n < 1) throw InputError("sample_gaussian_source: n must be positive");
  const int d = static_cast<int>(spec.mean.size());
  const Eigen::MatrixXd root = oracle::psd_sqrt(spec.covariance);
  Tensor out({n, d});
  Rng rng(Rng::mix(seed, 0x6A55));
  std::vector<double> normals(static_cast<size_t>(d));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) normals[static_cast<size_t>(j)] = rng.normal();
    for (int j = 0; j < d; ++j) {
      double acc = spec.mean(j);
      for (int t = 0; t < d; ++t) acc += root(j, t) * normals[static_cast<size_t>(t)];
      out.data[static_cast<size_t>(i) * d + j] = acc;
    }
  }
  return out;
}

ad::Tensor generate_pattern(PatternKind kind, int size, uint64_t seed) {
  Rng rng(Rng::mix(seed, 0xBA5E));
  Tensor img({size, size});
  const double inv = 1.0 / size;
  switch (kind) {
    case PatternKind::gradient: {
      const double a = rng.uniform(0.2, 0.8);
      const double gx = rng.uniform(-0.6, 0.6), gy = rng.uniform(-0.6, 0.6);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          img.data[static_cast<size_t>(y) * size + x] = clamp01(a + gx * x * inv + gy * y * inv);
      break;
    }
    case PatternKind::checker: {
      const int period = rng.uniform() < 0.5 ? 8 : 16;
      const int px = rng.uniform_int(period), py = rng.uniform_int(period);
      const double lo = rng.uniform(0.1, 0.35), hi = rng.uniform(0.65, 0.9);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const bool on = (((x + px) / period) + ((y + py) / period)) % 2 == 1;
          img.data[static_cast<size_t>(y) * size + x] = on ? hi : lo;
        }
      break;
    }
    case PatternKind::blobs: {
      // Parameters live on coarse grids so the scene manifold is compact and
      // precisely renderable at desk scale.
      const double a = 0.3 + 0.1 * rng.uniform_int(4);
      const double gx = -0.3 + 0.15 * rng.uniform_int(5);
      const double gy = -0.3 + 0.15 * rng.uniform_int(5);
      const int blobs = 2;
      double cx[2], cy[2], sg[2], amp[2];
      const double cell = size / 8.0;
      for (int b = 0; b < blobs; ++b) {
        cx[b] = cell * (1.5 + rng.uniform_int(6));
        cy[b] = cell * (1.5 + rng.uniform_int(6));
        sg[b] = rng.uniform() < 0.5 ? 1.4 : 2.2;
        amp[b] = (rng.uniform() < 0.5 ? 0.5 : 0.8) * (rng.uniform() < 0.35 ? -1.0 : 1.0);
      }
      // Axis-aligned stripe texture from a small set of variants: broad
      // support for blur to remove, yet easy to re-render from a global code.
      const double tex_amp = 0.1;
      const bool horizontal = rng.uniform() < 0.5;
      const int period = rng.uniform() < 0.5 ? 4 : 6;
      const int phase = rng.uniform_int(2) * (period / 2);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          double v = a + gx * x * inv + gy * y * inv;
          const int t = (horizontal ? y : x) + phase;
          v += tex_amp * std::sin(6.283185307179586 * t / period);
          for (int b = 0; b < blobs; ++b) {
            const double dx = x - cx[b], dy = y - cy[b];
            v += amp[b] * std::exp(-(dx * dx + dy * dy) / (2.0 * sg[b] * sg[b]));
          }
          img.data[static_cast<size_t>(y) * size + x] = clamp01(v);
        }
      break;
    }
  }
  return img;
}

ad::Tensor degrade(const ad::Tensor& image, DegradationKind kind, double level, uint64_t seed) {
  if (image.ndim() != 2) throw InputError("degrade: expected H x W image");
  for (double v : image.data)
    if (v < -1e-12 || v > 1.0 + 1e-12) throw InputError("degrade: image values must be in [0, 1]");
  const int h = image.shape[0], w = image.shape[1];
  Tensor out = image;
  switch (kind) {
    case DegradationKind::gaussian_noise: {
      if (level < 0.0 || level > 1.0) throw InputError("degrade: noise level must be in [0, 1]");
      Rng rng(Rng::mix(seed, 0x4015E));
      for (double& v : out.data) v = clamp01(v + level * rng.normal());
      break;
    }
    case DegradationKind::box_blur: {
      const int k = static_cast<int>(level);
      if (k < 1 || k > 15 || k % 2 == 0 || std::fabs(level - k) > 1e-9)
        throw InputError("degrade: blur level must be an odd integer in [1, 15]");
      if (k == 1) break;
      const int r = k / 2;
      const double inv = 1.0 / (k * k);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double acc = 0.0;
          for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) {
              const int yy = std::clamp(y + dy, 0, h - 1);
              const int xx = std::clamp(x + dx, 0, w - 1);
              acc += image.data[static_cast<size_t>(yy) * w + xx];
            }
          out.data[static_cast<size_t>(y) * w + x] = acc * inv;
        }
      break;
    }
    case DegradationKind::gamma_dark: {
      if (level < 1.0 || level > 8.0) throw InputError("degrade: gamma level must be in [1, 8]");
      for (double& v : out.data) v = std::pow(v, level);
      break;
    }
    case DegradationKind::haze_mix: {
      if (level < 0.0 || level > 1.0) throw InputError("degrade: haze level must be in [0, 1]");
      const double airlight = 0.8;
      for (double& v : out.data) v = (1.0 - level) * v + level * airlight;
      break;
    }
  }
  return out;
}

int worker_count() {
  const char* env = std::getenv("BARYIR_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return n >= 1 ? n : 1;
}

MultisourceScene make_multisource_scene(const SceneConfig& cfg) {
  cfg.validate();
  MultisourceScene scene;
  const int k_count = static_cast<int>(cfg.sources.size());
  scene.by_source.resize(static_cast<size_t>(k_count));

  for (int k = 0; k < k_count; ++k) {
    auto& bucket = scene.by_source[static_cast<size_t>(k)];
    bucket.resize(static_cast<size_t>(cfg.counts[static_cast<size_t>(k)]));
    const DegradationSpec& spec = cfg.sources[static_cast<size_t>(k)];
    const auto fill = [&](int begin, int end) {
      for (int i = begin; i < end; ++i) {
        const uint64_t sample_seed =
            Rng::mix(cfg.seed, static_cast<uint64_t>(k + 1), static_cast<uint64_t>(i));
        PairedSample s;
        s.source_id = k + 1;
        s.clean = generate_pattern(cfg.pattern, cfg.image_size, Rng::mix(sample_seed, 0x10));
        Rng pick(Rng::mix(sample_seed, 0x11));
        const double level = spec.levels[static_cast<size_t>(
            pick.uniform_int(static_cast<int>(spec.levels.size())))];
        s.degraded = degrade(s.clean, spec.kind, level, Rng::mix(sample_seed, 0x20));
        bucket[static_cast<size_t>(i)] = std::move(s);
      }
    };
    const int workers = std::min(worker_count(), cfg.counts[static_cast<size_t>(k)]);
    if (workers <= 1) {
      fill(0, cfg.counts[static_cast<size_t>(k)]);
    } else {
      std::vector<std::thread> pool;
      const int total = cfg.counts[static_cast<size_t>(k)];
      for (int t = 0; t < workers; ++t) {
        const int begin = total * t / workers, end = total * (t + 1) / workers;
        pool.emplace_back(fill, begin, end);
      }
      for (auto& th : pool) th.join();
    }
  }

  scene.manifest.image_size = cfg.image_size;
  scene.manifest.k_count = k_count;
  scene.manifest.counts = cfg.counts;
  scene.manifest.lambda = source_weights_from_counts(cfg.counts);
  scene.manifest.seed = cfg.seed;
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& bucket : scene.by_source)
    for (const auto& s : bucket) {
      h = hash_tensor(s.clean, h);
      h = hash_tensor(s.degraded, h);
    }
  scene.manifest.content_hash = h;
  return scene;
}

std::vector<double> source_weights_from_counts(const std::vector<int>& counts) {
  if (counts.empty()) throw InputError("source weights: empty counts");
  long total = 0;
  for (int c : counts) {
    if (c <= 0) throw InputError("source weights: counts must be positive");
    total += c;
  }
  std::vector<double> lambda(counts.size());
  double acc = 0.0;
  for (size_t k = 0; k + 1 < counts.size(); ++k) {
    lambda[k] = static_cast<double>(counts[k]) / static_cast<double>(total);
    acc += lambda[k];
  }
  lambda.back() = 1.0 - acc;
  return lambda;
}

namespace {

void write_raw(const std::string& path, const std::vector<double>& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("dataset export: cannot open " + path);
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
}

std::vector<double> read_raw(const std::string& path, size_t expect) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("dataset import: cannot open " + path);
  std::vector<double> data(expect);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(expect * sizeof(double)));
  if (!in) throw InputError("dataset import: truncated file " + path);
  return data;
}

std::string hex(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void export_scene(const MultisourceScene& scene, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const int s = scene.manifest.image_size;
  json files = json::array();
  for (size_t k = 0; k < scene.by_source.size(); ++k) {
    const auto& bucket = scene.by_source[k];
    std::vector<double> clean, degraded;
    clean.reserve(bucket.size() * static_cast<size_t>(s) * s);
    for (const auto& sample : bucket) {
      clean.insert(clean.end(), sample.clean.data.begin(), sample.clean.data.end());
      degraded.insert(degraded.end(), sample.degraded.data.begin(), sample.degraded.data.end());
    }
    const std::string cname = "source_" + std::to_string(k + 1) + "_clean.f64";
    const std::string dname = "source_" + std::to_string(k + 1) + "_degraded.f64";
    write_raw(dir + "/" + cname, clean);
    write_raw(dir + "/" + dname, degraded);
    json fc, fd;
    fc["name"] = cname;
    fc["count"] = bucket.size();
    fc["hash"] = hex(fnv1a64(clean.data(), clean.size() * sizeof(double)));
    fd["name"] = dname;
    fd["count"] = bucket.size();
    fd["hash"] = hex(fnv1a64(degraded.data(), degraded.size() * sizeof(double)));
    files.push_back(fc);
    files.push_back(fd);
  }
  json manifest = json::parse(scene.manifest.to_json());
  manifest["files"] = files;
  std::ofstream out(dir + "/manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw InputError("dataset export: cannot write manifest");
}

MultisourceScene import_scene(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw InputError("dataset import: missing manifest in " + dir);
  json manifest = json::parse(in);
  MultisourceScene scene;
  scene.manifest.image_size = manifest.at("image_size").get<int>();
  scene.manifest.k_count = manifest.at("k_count").get<int>();
  scene.manifest.counts = manifest.at("counts").get<std::vector<int>>();
  scene.manifest.lambda = manifest.at("lambda").get<std::vector<double>>();
  scene.manifest.seed = manifest.at("seed").get<uint64_t>();
  scene.manifest.content_hash =
      std::stoull(manifest.at("content_hash").get<std::string>(), nullptr, 16);

  const int s = scene.manifest.image_size;
  scene.by_source.resize(static_cast<size_t>(scene.manifest.k_count));
  for (int k = 0; k < scene.manifest.k_count; ++k) {
    const size_t n = static_cast<size_t>(scene.manifest.counts[static_cast<size_t>(k)]);
    const std::string cname = "source_" + std::to_string(k + 1) + "_clean.f64";
    const std::string dname = "source_" + std::to_string(k + 1) + "_degraded.f64";
    std::vector<double> clean = read_raw(dir + "/" + cname, n * s * s);
    std::vector<double> degraded = read_raw(dir + "/" + dname, n * s * s);
    // hash validation against the manifest
    for (const auto& f : manifest.at("files")) {
      const std::string name = f.at("name").get<std::string>();
      if (name != cname && name != dname) continue;
      const std::vector<double>& payload = name == cname ? clean : degraded;
      const uint64_t expect = std::stoull(f.at("hash").get<std::string>(), nullptr, 16);
      if (fnv1a64(payload.data(), payload.size() * sizeof(double)) != expect)
        throw InputError("dataset import: hash mismatch for " + name);
    }
    auto& bucket = scene.by_source[static_cast<size_t>(k)];
    for (size_t i = 0; i < n; ++i) {
      PairedSample sample;
      sample.source_id = k + 1;
      sample.clean.shape = {s, s};
      sample.clean.data.assign(clean.begin() + static_cast<long>(i) * s * s,
                               clean.begin() + static_cast<long>(i + 1) * s * s);
      sample.degraded.shape = {s, s};
      sample.degraded.data.assign(degraded.begin() + static_cast<long>(i) * s * s,
                                  degraded.begin() + static_cast<long>(i + 1) * s * s);
      bucket.push_back(std::move(sample));
    }
  }
  return scene;
}

}  // namespace baryir::synth
