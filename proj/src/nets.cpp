#include "baryir/nets.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "baryir/errors.hpp"
#include "baryir/rng.hpp"

namespace baryir::nets {

namespace {

using ad::Tensor;
using nlohmann::json;

Tensor uniform_tensor(std::vector<int> shape, double range, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-range, range);
  return t;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

}  // namespace

void MlpParams::validate() const {
  if (layers.empty()) throw ContractError("mlp: no layers");
  for (size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    if (l.weight.ndim() != 2 || l.bias.ndim() != 1 || l.bias.shape[0] != l.weight.shape[1])
      throw DimensionError("mlp: malformed layer " + std::to_string(i));
    if (i > 0 && layers[i - 1].weight.shape[1] != l.weight.shape[0])
      throw DimensionError("mlp: layer dimensions do not chain at layer " + std::to_string(i));
    if (!l.weight.all_finite() || !l.bias.all_finite())
      throw NumericalError("mlp: non-finite parameters");
  }
}

MlpParams init_mlp(uint64_t seed, const std::vector<int>& dims, Activation hidden,
                   bool zero_last) {
  if (dims.size() < 2) throw ContractError("init_mlp: need at least input and output dims");
  for (int d : dims)
    if (d < 1) throw ContractError("init_mlp: dims must be >= 1");
  MlpParams p;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    Rng rng(Rng::mix(seed, 0x11, static_cast<uint64_t>(i)));
    Layer l;
    const bool last = i + 2 == dims.size();
    const double range = 1.0 / std::sqrt(static_cast<double>(dims[i]));
    l.weight = (last && zero_last) ? Tensor::zeros({dims[i], dims[i + 1]})
                                   : uniform_tensor({dims[i], dims[i + 1]}, range, rng);
    l.bias = Tensor::zeros({dims[i + 1]});
    l.act = last ? Activation::none : hidden;
    p.layers.push_back(std::move(l));
  }
  return p;
}

MlpVars register_mlp(ad::Graph& g, const MlpParams& p) {
  MlpVars v;
  for (const Layer& l : p.layers) v.layers.push_back({g.leaf(l.weight), g.leaf(l.bias)});
  return v;
}

ad::Var mlp_apply(ad::Graph& g, const MlpParams& p, const MlpVars& vars, ad::Var x) {
  if (g.value(x).cols() != p.input_dim())
    throw DimensionError("mlp_apply: input width " + g.value(x).shape_str() + " != " +
                         std::to_string(p.input_dim()));
  ad::Var h = x;
  for (size_t i = 0; i < p.layers.size(); ++i) {
    h = g.add_row_vector(g.matmul(h, vars.layers[i].first), vars.layers[i].second);
    if (p.layers[i].act == Activation::relu) h = g.relu(h);
  }
  return h;
}

ad::Tensor mlp_forward(const MlpParams& p, const ad::Tensor& x) {
  ad::Graph g;
  MlpVars v = register_mlp(g, p);
  return g.value(mlp_apply(g, p, v, g.leaf(x)));
}

BarycenterMap init_barycenter_map(uint64_t seed, int latent_dim, const std::vector<int>& hidden) {
  std::vector<int> dims{latent_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(latent_dim);
  BarycenterMap m;
  m.mlp = init_mlp(Rng::mix(seed, 0xA1), dims, Activation::relu, /*zero_last=*/true);
  return m;
}

ad::Var map_apply(ad::Graph& g, const BarycenterMap& m, const MlpVars& vars, ad::Var z) {
  return g.add(z, mlp_apply(g, m.mlp, vars, z));
}

ad::Tensor map_forward(const BarycenterMap& m, const ad::Tensor& z) {
  ad::Graph g;
  MlpVars v = register_mlp(g, m.mlp);
  return g.value(map_apply(g, m, v, g.leaf(z)));
}

MlpParams init_potential(uint64_t seed, int latent_dim, const std::vector<int>& hidden) {
  std::vector<int> dims{latent_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  // Zero-initialized head: potentials start at f = 0, matching the identity
  // start of the map.
  return init_mlp(seed, dims, Activation::relu, /*zero_last=*/true);
}

namespace {

ConvLayer init_conv(uint64_t seed, int ic, int oc, int k, int stride, int pad, bool deconv) {
  Rng rng(seed);
  ConvLayer l;
  l.in_ch = ic;
  l.out_ch = oc;
  l.k = k;
  l.stride = stride;
  l.pad = pad;
  const double range = 1.0 / std::sqrt(static_cast<double>(ic) * k * k);
  if (deconv)
    l.weight = uniform_tensor({ic, k * k * oc}, range, rng);
  else
    l.weight = uniform_tensor({oc, k * k * ic}, range, rng);
  l.bias = Tensor::zeros({oc});
  return l;
}

}  // namespace

ConvEncoder init_encoder(uint64_t seed, int image_size, int c1, int c2, int latent_dim) {
  if (image_size % 4 != 0) throw ContractError("encoder: image size must be divisible by 4");
  ConvEncoder e;
  e.image_size = image_size;
  e.latent_dim = latent_dim;
  e.c1 = init_conv(Rng::mix(seed, 0xE1), 1, c1, 3, 2, 1, false);
  e.c2 = init_conv(Rng::mix(seed, 0xE2), c1, c2, 3, 2, 1, false);
  const int flat = (image_size / 4) * (image_size / 4) * c2;
  Rng rng(Rng::mix(seed, 0xE3));
  e.proj_w = uniform_tensor({flat, latent_dim}, 1.0 / std::sqrt(static_cast<double>(flat)), rng);
  e.proj_b = Tensor::zeros({latent_dim});
  return e;
}

ConvDecoder init_decoder(uint64_t seed, int image_size, int c1, int c2, int latent_dim) {
  if (image_size % 4 != 0) throw ContractError("decoder: image size must be divisible by 4");
  ConvDecoder d;
  d.image_size = image_size;
  d.latent_dim = latent_dim;
  const int flat = (image_size / 4) * (image_size / 4) * c2;
  Rng rng(Rng::mix(seed, 0xD0));
  d.fc_w = uniform_tensor({latent_dim, flat}, 1.0 / std::sqrt(static_cast<double>(latent_dim)), rng);
  d.fc_b = Tensor::zeros({flat});
  d.d1 = init_conv(Rng::mix(seed, 0xD1), c2, c1, 4, 2, 1, true);
  d.d2 = init_conv(Rng::mix(seed, 0xD2), c1, c1, 4, 2, 1, true);
  d.d3 = init_conv(Rng::mix(seed, 0xD3), c1, 1, 3, 1, 1, false);
  return d;
}

EncoderVars register_encoder(ad::Graph& g, const ConvEncoder& e) {
  return {{g.leaf(e.c1.weight), g.leaf(e.c1.bias)},
          {g.leaf(e.c2.weight), g.leaf(e.c2.bias)},
          {g.leaf(e.proj_w), g.leaf(e.proj_b)}};
}

DecoderVars register_decoder(ad::Graph& g, const ConvDecoder& d) {
  return {{g.leaf(d.fc_w), g.leaf(d.fc_b)},
          {g.leaf(d.d1.weight), g.leaf(d.d1.bias)},
          {g.leaf(d.d2.weight), g.leaf(d.d2.bias)},
          {g.leaf(d.d3.weight), g.leaf(d.d3.bias)}};
}

namespace {

ad::Var conv_apply(ad::Graph& g, const ConvLayer& l, std::pair<ad::Var, ad::Var> vars, ad::Var x,
                   bool final_relu) {
  const std::vector<int> shape = g.value(x).shape;  // N H W C
  const int n = shape[0], h = shape[1], w = shape[2];
  const int oh = (h + 2 * l.pad - l.k) / l.stride + 1;
  const int ow = (w + 2 * l.pad - l.k) / l.stride + 1;
  ad::Var cols = g.im2col(x, l.k, l.k, l.stride, l.pad);
  ad::Var out = g.add_row_vector(g.matmul_nt(cols, vars.first), vars.second);
  out = g.reshape(out, {n, oh, ow, l.out_ch});
  if (final_relu) out = g.relu(out);
  return out;
}

ad::Var deconv_apply(ad::Graph& g, const ConvLayer& l, std::pair<ad::Var, ad::Var> vars, ad::Var x,
                     bool final_relu) {
  const std::vector<int> shape = g.value(x).shape;  // N H W C
  const int n = shape[0], h = shape[1], w = shape[2], c = shape[3];
  const int oh = h * l.stride, ow = w * l.stride;  // k = 2*stride, pad = stride/2
  ad::Var flat = g.reshape(x, {n * h * w, c});
  ad::Var cols = g.matmul(flat, vars.first);  // rows x (k*k*oc)
  ad::Var img = g.col2im(cols, n, h, w, l.k, l.k, l.stride, l.pad, oh, ow, l.out_ch);
  ad::Var biased = g.reshape(
      g.add_row_vector(g.reshape(img, {n * oh * ow, l.out_ch}), vars.second), {n, oh, ow, l.out_ch});
  if (final_relu) biased = g.relu(biased);
  return biased;
}

}  // namespace

ad::Var encoder_apply(ad::Graph& g, const ConvEncoder& e, const EncoderVars& v, ad::Var images) {
  const std::vector<int> shape = g.value(images).shape;
  if (shape.size() != 4 || shape[1] != e.image_size || shape[2] != e.image_size || shape[3] != 1)
    throw DimensionError("encoder: expected N x " + std::to_string(e.image_size) + " x " +
                         std::to_string(e.image_size) + " x 1 input");
  const int n = shape[0];
  ad::Var h1 = conv_apply(g, e.c1, v.c1, images, true);
  ad::Var h2 = conv_apply(g, e.c2, v.c2, h1, true);
  const int flat = (e.image_size / 4) * (e.image_size / 4) * e.c2.out_ch;
  ad::Var z = g.add_row_vector(g.matmul(g.reshape(h2, {n, flat}), v.proj.first), v.proj.second);
  return z;
}

ad::Var decoder_apply(ad::Graph& g, const ConvDecoder& d, const DecoderVars& v, ad::Var z) {
  const int n = g.value(z).rows();
  const int side = d.image_size / 4;
  ad::Var h = g.relu(g.add_row_vector(g.matmul(z, v.fc.first), v.fc.second));
  ad::Var img = g.reshape(h, {n, side, side, d.d1.in_ch});
  img = deconv_apply(g, d.d1, v.d1, img, true);
  img = deconv_apply(g, d.d2, v.d2, img, true);
  img = conv_apply(g, d.d3, v.d3, img, false);
  return img;
}

ModelBundle init_model(const ArchSpec& arch, uint64_t seed, uint64_t config_hash) {
  if (arch.k_count < 1) throw ContractError("init_model: k_count must be >= 1");
  ModelBundle m;
  m.arch = arch;
  m.seed = seed;
  m.config_hash = config_hash;
  m.map = init_barycenter_map(Rng::mix(seed, 1), arch.latent_dim, arch.map_hidden);
  for (int k = 0; k < arch.k_count; ++k)
    m.potentials.push_back(
        init_potential(Rng::mix(seed, 2, static_cast<uint64_t>(k)), arch.latent_dim,
                       arch.potential_hidden));
  if (arch.kind == "image") {
    m.encoder = init_encoder(Rng::mix(seed, 3), arch.image_size, arch.enc_c1, arch.enc_c2,
                             arch.latent_dim);
    m.decoder = init_decoder(Rng::mix(seed, 4), arch.image_size, arch.enc_c1, arch.enc_c2,
                             arch.latent_dim);
    const bool concat_mode = arch.aggregation == "barycenter_plus_specific" ||
                             arch.aggregation == "original_plus_specific";
    if (concat_mode && arch.fuse == "concat") {
      Rng rng(Rng::mix(seed, 5));
      m.reduction_w = uniform_tensor({2 * arch.latent_dim, arch.latent_dim},
                                     1.0 / std::sqrt(2.0 * arch.latent_dim), rng);
      m.reduction_b = Tensor::zeros({arch.latent_dim});
    } else if (concat_mode && arch.fuse == "add") {
      // Additive fusion starts as a pass-through of the primary stream.
      m.reduction_w = Tensor::zeros({arch.latent_dim, arch.latent_dim});
      m.reduction_b = Tensor::zeros({arch.latent_dim});
    }
  } else if (arch.kind != "vector") {
    throw ContractError("init_model: unknown kind '" + arch.kind + "'");
  }
  return m;
}

std::vector<ad::Tensor*> ModelBundle::all_tensors() {
  std::vector<ad::Tensor*> out;
  for (Layer& l : map.mlp.layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  for (MlpParams& p : potentials)
    for (Layer& l : p.layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  if (encoder) {
    for (ConvLayer* l : {&encoder->c1, &encoder->c2}) {
      out.push_back(&l->weight);
      out.push_back(&l->bias);
    }
    out.push_back(&encoder->proj_w);
    out.push_back(&encoder->proj_b);
  }
  if (decoder) {
    out.push_back(&decoder->fc_w);
    out.push_back(&decoder->fc_b);
    for (ConvLayer* l : {&decoder->d1, &decoder->d2, &decoder->d3}) {
      out.push_back(&l->weight);
      out.push_back(&l->bias);
    }
  }
  if (reduction_w) {
    out.push_back(&*reduction_w);
    out.push_back(&*reduction_b);
  }
  return out;
}

std::vector<const ad::Tensor*> ModelBundle::all_tensors() const {
  auto mut = const_cast<ModelBundle*>(this)->all_tensors();
  return std::vector<const ad::Tensor*>(mut.begin(), mut.end());
}

namespace {

json arch_to_json(const ArchSpec& a) {
  json j;
  j["kind"] = a.kind;
  j["k_count"] = a.k_count;
  j["latent_dim"] = a.latent_dim;
  j["map_hidden"] = a.map_hidden;
  j["potential_hidden"] = a.potential_hidden;
  j["image_size"] = a.image_size;
  j["enc_c1"] = a.enc_c1;
  j["enc_c2"] = a.enc_c2;
  j["aggregation"] = a.aggregation;
  j["fuse"] = a.fuse;
  return j;
}

ArchSpec arch_from_json(const json& j) {
  ArchSpec a;
  a.kind = j.at("kind").get<std::string>();
  a.k_count = j.at("k_count").get<int>();
  a.latent_dim = j.at("latent_dim").get<int>();
  a.map_hidden = j.at("map_hidden").get<std::vector<int>>();
  a.potential_hidden = j.at("potential_hidden").get<std::vector<int>>();
  a.image_size = j.at("image_size").get<int>();
  a.enc_c1 = j.at("enc_c1").get<int>();
  a.enc_c2 = j.at("enc_c2").get<int>();
  a.aggregation = j.at("aggregation").get<std::string>();
  a.fuse = j.at("fuse").get<std::string>();
  return a;
}

constexpr char kMagic[4] = {'B', 'Y', 'C', '1'};

}  // namespace

void save_checkpoint(const ModelBundle& m, const std::string& path) {
  json header;
  header["schema"] = 1;
  header["byte_order"] = "LE";
  header["seed"] = hex64(m.seed);
  header["config_hash"] = hex64(m.config_hash);
  header["arch"] = arch_to_json(m.arch);
  std::vector<const ad::Tensor*> tensors = m.all_tensors();
  json shapes = json::array();
  for (const ad::Tensor* t : tensors) shapes.push_back(t->shape);
  header["tensor_shapes"] = shapes;
  const std::string head = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("save_checkpoint: cannot open " + path);
  out.write(kMagic, 4);
  const uint32_t len = static_cast<uint32_t>(head.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const ad::Tensor* t : tensors)
    out.write(reinterpret_cast<const char*>(t->data.data()),
              static_cast<std::streamsize>(t->data.size() * sizeof(double)));
  if (!out) throw InputError("save_checkpoint: write failed for " + path);
}

ModelBundle load_checkpoint(const std::string& path, const ArchSpec* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("load_checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw InputError("load_checkpoint: bad magic in " + path);
  uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  std::string head(len, '\0');
  in.read(head.data(), len);
  if (!in) throw InputError("load_checkpoint: truncated header in " + path);
  json header = json::parse(head);
  if (header.at("byte_order").get<std::string>() != "LE")
    throw InputError("load_checkpoint: unsupported byte order");
  const ArchSpec arch = arch_from_json(header.at("arch"));
  if (expected && !(arch == *expected))
    throw InputError("load_checkpoint: architecture mismatch with requested spec");

  ModelBundle m = init_model(arch, parse_hex64(header.at("seed").get<std::string>()),
                             parse_hex64(header.at("config_hash").get<std::string>()));
  std::vector<ad::Tensor*> tensors = m.all_tensors();
  const json& shapes = header.at("tensor_shapes");
  if (shapes.size() != tensors.size())
    throw InputError("load_checkpoint: tensor count mismatch");
  for (size_t i = 0; i < tensors.size(); ++i) {
    const std::vector<int> s = shapes[i].get<std::vector<int>>();
    if (s != tensors[i]->shape) throw InputError("load_checkpoint: tensor shape mismatch");
    in.read(reinterpret_cast<char*>(tensors[i]->data.data()),
            static_cast<std::streamsize>(tensors[i]->data.size() * sizeof(double)));
  }
  if (!in) throw InputError("load_checkpoint: truncated tensor data in " + path);
  return m;
}

}  // namespace baryir::nets
