#include "sscn/model.hpp"

#include <cstring>
#include <fstream>

#include "sscn/common.hpp"

namespace sscn {

namespace F = torch::nn::functional;

nlohmann::json ModelConfig::to_json() const {
  return {{"resolution", resolution},
          {"scale_factor", scale_factor},
          {"class_count", class_count},
          {"two_stage", two_stage},
          {"q_bins", q_bins}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.resolution = j.at("resolution").get<int64_t>();
  c.scale_factor = j.at("scale_factor").get<double>();
  c.class_count = j.at("class_count").get<int64_t>();
  c.two_stage = j.at("two_stage").get<bool>();
  c.q_bins = j.at("q_bins").get<int64_t>();
  return c;
}

std::vector<std::string> config_diff(const ModelConfig& expected, const ModelConfig& actual) {
  std::vector<std::string> diffs;
  auto add = [&](const std::string& field, const std::string& want, const std::string& got) {
    if (want != got) {
      diffs.push_back(field + ": expected " + want + ", got " + got);
    }
  };
  add("resolution", std::to_string(expected.resolution), std::to_string(actual.resolution));
  add("scale_factor", std::to_string(expected.scale_factor),
      std::to_string(actual.scale_factor));
  add("class_count", std::to_string(expected.class_count), std::to_string(actual.class_count));
  add("two_stage", expected.two_stage ? "true" : "false", actual.two_stage ? "true" : "false");
  add("q_bins", std::to_string(expected.q_bins), std::to_string(actual.q_bins));
  return diffs;
}

SscnModelImpl::SscnModelImpl(const ModelConfig& cfg) : config(cfg) {
  TORCH_CHECK(cfg.resolution % 16 == 0, "resolution must be divisible by 16");
  TORCH_CHECK(cfg.q_bins == AbGamut::kBins, "distribution head is tied to the gamut size");
  ref_encoder = register_module("ref_encoder", RefEncoder(3, cfg.scale_factor));
  if (cfg.two_stage) {
    gray_encoder = register_module("gray_encoder", GrayEncoder(cfg.scale_factor));
    gct_decoder = register_module("gct_decoder", GctDecoder(cfg.scale_factor));
    style_mlp = register_module(
        "style_mlp",
        StyleMlp(ref_encoder->level_channels().back(), gct_decoder->adain_channels()));
  } else {
    gray_corr_encoder = register_module("gray_corr_encoder", RefEncoder(1, cfg.scale_factor));
  }
  const auto& ch = ref_encoder->level_channels();
  d_ = ch[0] + ch[1] + ch[2] + ch[3];
  classifier = register_module("classifier", CamClassifier(ch[4], cfg.class_count));
  attention = register_module("attention", Attention(d_));
  fusion = register_module("fusion", FusionDecoder(ch, d_, cfg.q_bins));
}

FeaturePyramid SscnModelImpl::encode_reference(const torch::Tensor& lab_norm,
                                               FeaturePyramid::Source tag) {
  return ref_encoder->forward(lab_norm, tag);
}

StyleVector SscnModelImpl::style_from_features(const FeaturePyramid& pyramid) {
  TORCH_CHECK(config.two_stage, "style path is absent in the single-stage variant");
  return style_mlp->forward(pyramid.levels.back().mean({2, 3}));
}

torch::Tensor SscnModelImpl::coarse_from_style(const torch::Tensor& L_norm,
                                               const StyleVector& style) {
  TORCH_CHECK(config.two_stage, "coarse stage is absent in the single-stage variant");
  auto taps = gray_encoder->forward(L_norm);
  return gct_decoder->forward(taps.back(), style);
}

torch::Tensor SscnModelImpl::coarse_colorize(const torch::Tensor& L_norm,
                                             const torch::Tensor& ref_lab_norm) {
  auto pyr = encode_reference(ref_lab_norm, FeaturePyramid::Source::kReference);
  return coarse_from_style(L_norm, style_from_features(pyr));
}

TrainForward SscnModelImpl::forward_train(const torch::Tensor& L_norm,
                                          const torch::Tensor& ref_lab_norm,
                                          const std::optional<torch::Tensor>& labels,
                                          int64_t k, int64_t r, std::mt19937_64& rng,
                                          AttendMode mode) {
  const auto b = L_norm.size(0);
  auto ref_pyr = encode_reference(ref_lab_norm, FeaturePyramid::Source::kReference);

  TrainForward out;
  FeaturePyramid corr_pyr;
  if (config.two_stage) {
    out.coarse_ab = coarse_from_style(L_norm, style_from_features(ref_pyr));
    auto coarse_lab_norm = torch::cat({L_norm, out.coarse_ab}, 1);
    corr_pyr = encode_reference(coarse_lab_norm, FeaturePyramid::Source::kCoarse);
  } else {
    corr_pyr = gray_corr_encoder->forward(L_norm, FeaturePyramid::Source::kCoarse);
  }

  auto flat_c = flatten_pyramid(corr_pyr);
  auto flat_r = flatten_pyramid(ref_pyr);
  auto cam_out = classifier->forward(ref_pyr, labels, flat_r.h4, flat_r.w4);
  out.logits = cam_out.logits;

  std::optional<torch::Tensor> key_idx;
  if (mode == AttendMode::kSparse) {
    auto idx = torch::empty({b, k + r}, torch::kInt64);
    for (int64_t i = 0; i < b; ++i) {
      auto sel = select_regions(cam_out.cam[i].detach(), k, r, rng);
      idx[i] = torch::tensor(sel.all(), torch::kInt64);
    }
    key_idx = idx;
  }
  auto attn = attention->forward(flat_c, flat_r, key_idx);
  out.attend_stats = attn.stats;

  FlattenedFeatures attended = flat_c;
  attended.mat = attn.attended;
  auto fused = fusion->forward(unflatten(attended), corr_pyr);
  out.final_ab = fused.ab;
  out.distribution = fused.distribution;
  return out;
}

torch::Tensor lab_norm_from_rgb(const torch::Tensor& rgb) {
  auto lab = rgb_to_lab(rgb);
  auto t = torch::stack({normalize_luminance(lab.L), normalize_chroma(lab.a),
                         normalize_chroma(lab.b)},
                        0);
  return t.to(torch::kFloat32);
}

torch::Tensor resize_image(const torch::Tensor& img, int64_t h, int64_t w) {
  TORCH_CHECK(img.dim() == 3, "resize_image expects (C,H,W)");
  if (img.size(1) == h && img.size(2) == w) {
    return img;
  }
  return F::interpolate(img.to(torch::kFloat64).unsqueeze(0),
                        F::InterpolateFuncOptions()
                            .size(std::vector<int64_t>{h, w})
                            .mode(torch::kBilinear)
                            .align_corners(false))
      .squeeze(0)
      .to(img.dtype());
}

LabImage SscnModelImpl::colorize(const torch::Tensor& target_L,
                                 const torch::Tensor& reference_rgb, AttendMode mode,
                                 int64_t k, int64_t r, uint64_t selection_seed,
                                 ColorizeDiagnostics* diagnostics) {
  TORCH_CHECK(weights_ready_, "model has no trained weights loaded; colorize rejected");
  TORCH_CHECK(target_L.dim() == 2, "target_L must be (H,W)");
  TORCH_CHECK(reference_rgb.dim() == 3 && reference_rgb.size(0) == 3,
              "reference must be (3,H,W)");

  torch::NoGradGuard ng;
  eval();
  const auto res = config.resolution;
  const auto out_h = target_L.size(0), out_w = target_L.size(1);

  auto L_net = normalize_luminance(resize_image(target_L.unsqueeze(0), res, res))
                   .to(torch::kFloat32)
                   .unsqueeze(0);
  auto ref_net = lab_norm_from_rgb(resize_image(reference_rgb, res, res)).unsqueeze(0);

  auto ref_pyr = encode_reference(ref_net, FeaturePyramid::Source::kReference);
  torch::Tensor coarse_ab;
  FeaturePyramid corr_pyr;
  if (config.two_stage) {
    coarse_ab = coarse_from_style(L_net, style_from_features(ref_pyr));
    corr_pyr = encode_reference(torch::cat({L_net, coarse_ab}, 1),
                                FeaturePyramid::Source::kCoarse);
  } else {
    corr_pyr = gray_corr_encoder->forward(L_net, FeaturePyramid::Source::kCoarse);
  }

  auto flat_c = flatten_pyramid(corr_pyr);
  auto flat_r = flatten_pyramid(ref_pyr);
  auto cam_out = classifier->forward(ref_pyr, std::nullopt, flat_r.h4, flat_r.w4);

  std::optional<torch::Tensor> key_idx;
  std::optional<SparseSelection> selection;
  if (mode == AttendMode::kSparse) {
    auto rng = make_rng(selection_seed);
    selection = select_regions(cam_out.cam[0], k, r, rng);
    key_idx = torch::tensor(selection->all(), torch::kInt64).unsqueeze(0);
  }
  auto attn = attention->forward(flat_c, flat_r, key_idx);

  FlattenedFeatures attended = flat_c;
  attended.mat = attn.attended;
  auto fused = fusion->forward(unflatten(attended), corr_pyr);

  auto ab_raw = denormalize_chroma(fused.ab.squeeze(0).to(torch::kFloat64));
  auto ab_full = resize_image(ab_raw, out_h, out_w);

  if (diagnostics) {
    diagnostics->attention = attn;
    diagnostics->selection = selection;
    if (coarse_ab.defined()) {
      diagnostics->coarse_ab =
          resize_image(denormalize_chroma(coarse_ab.squeeze(0).to(torch::kFloat64)), out_h,
                       out_w);
    }
  }

  LabImage out;
  out.L = target_L.to(torch::kFloat64).clone();
  out.a = ab_full[0].clamp(-kChromaRange, kChromaRange);
  out.b = ab_full[1].clamp(-kChromaRange, kChromaRange);
  return out;
}

namespace {

constexpr char kMagic[8] = {'S', 'S', 'C', 'N', 'C', 'K', 'P', 'T'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  auto n = read_pod<uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  return s;
}

uint8_t dtype_code(torch::Dtype d) {
  switch (d) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    case torch::kUInt8: return 3;
    default: TORCH_CHECK(false, "unsupported checkpoint dtype");
  }
}

torch::Dtype dtype_from_code(uint8_t c) {
  switch (c) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    case 3: return torch::kUInt8;
    default: throw std::runtime_error("corrupt checkpoint: unknown dtype");
  }
}

void write_tensor(std::ostream& out, const std::string& name, const torch::Tensor& t) {
  write_string(out, name);
  auto c = t.detach().contiguous();
  write_pod<uint8_t>(out, dtype_code(c.scalar_type()));
  write_pod<uint32_t>(out, static_cast<uint32_t>(c.dim()));
  for (auto s : c.sizes()) {
    write_pod<int64_t>(out, s);
  }
  uint64_t nbytes = c.numel() * c.element_size();
  write_pod<uint64_t>(out, nbytes);
  out.write(static_cast<const char*>(c.data_ptr()), static_cast<std::streamsize>(nbytes));
}

std::pair<std::string, torch::Tensor> read_tensor(std::istream& in) {
  auto name = read_string(in);
  auto dtype = dtype_from_code(read_pod<uint8_t>(in));
  auto ndim = read_pod<uint32_t>(in);
  std::vector<int64_t> shape(ndim);
  for (auto& s : shape) {
    s = read_pod<int64_t>(in);
  }
  auto nbytes = read_pod<uint64_t>(in);
  auto t = torch::empty(shape, dtype);
  TORCH_CHECK(static_cast<uint64_t>(t.numel() * t.element_size()) == nbytes,
              "corrupt checkpoint: byte count mismatch for ", name);
  in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
  return {name, t};
}

}  // namespace

void save_checkpoint(const std::string& path, SscnModel& model, const CheckpointMeta& meta,
                     const std::string& optimizer_blob) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write checkpoint: " + path);
  }
  out.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(out, 1);  // format version

  nlohmann::json header;
  header["config"] = model->config.to_json();
  header["step"] = meta.step;
  header["epoch"] = meta.epoch;
  header["class_names"] = meta.class_names;
  header["arch"] = {{"ref_channels", model->ref_encoder->level_channels()},
                    {"correspondence_dim", model->correspondence_dim()},
                    {"gray_encoder", "vgg19 lead-conv sublayers, cuts relu1_2..relu5_2"},
                    {"adain_sites", model->config.two_stage
                                        ? model->gct_decoder->adain_channels()
                                        : std::vector<int64_t>{}}};
  header["has_optimizer"] = !optimizer_blob.empty();
  write_string(out, header.dump());

  std::vector<std::pair<std::string, torch::Tensor>> tensors;
  for (const auto& p : model->named_parameters()) {
    tensors.emplace_back(p.key(), p.value());
  }
  for (const auto& b : model->named_buffers()) {
    tensors.emplace_back("buffer/" + b.key(), b.value());
  }
  write_pod<uint32_t>(out, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_tensor(out, name, t);
  }
  write_string(out, optimizer_blob);
  if (!out) {
    throw std::runtime_error("short write on checkpoint: " + path);
  }
}

LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::optional<ModelConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot read checkpoint: " + path);
  }
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  auto version = read_pod<uint32_t>(in);
  if (version != 1) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }

  LoadedCheckpoint loaded;
  loaded.header = nlohmann::json::parse(read_string(in));
  auto config = ModelConfig::from_json(loaded.header.at("config"));
  if (expected.has_value()) {
    auto diffs = config_diff(*expected, config);
    if (!diffs.empty()) {
      std::string msg = "checkpoint config mismatch:";
      for (const auto& d : diffs) {
        msg += " [" + d + "]";
      }
      throw std::runtime_error(msg);
    }
  }
  loaded.meta.step = loaded.header.at("step").get<int64_t>();
  loaded.meta.epoch = loaded.header.at("epoch").get<int64_t>();
  loaded.meta.class_names = loaded.header.at("class_names").get<std::vector<std::string>>();

  loaded.model = SscnModel(config);
  std::map<std::string, torch::Tensor> by_name;
  auto n = read_pod<uint32_t>(in);
  for (uint32_t i = 0; i < n; ++i) {
    auto [name, t] = read_tensor(in);
    by_name.emplace(std::move(name), std::move(t));
  }
  loaded.optimizer_blob = read_string(in);
  if (!in) {
    throw std::runtime_error("truncated checkpoint: " + path);
  }

  torch::NoGradGuard ng;
  for (auto& p : loaded.model->named_parameters()) {
    auto it = by_name.find(p.key());
    TORCH_CHECK(it != by_name.end(), "checkpoint is missing tensor ", p.key());
    TORCH_CHECK(it->second.sizes() == p.value().sizes(), "shape mismatch for ", p.key());
    p.value().copy_(it->second);
    by_name.erase(it);
  }
  for (auto& b : loaded.model->named_buffers()) {
    auto it = by_name.find("buffer/" + b.key());
    TORCH_CHECK(it != by_name.end(), "checkpoint is missing buffer ", b.key());
    b.value().copy_(it->second);
    by_name.erase(it);
  }
  TORCH_CHECK(by_name.empty(), "checkpoint has ", by_name.size(), " unexpected tensors");
  loaded.model->mark_trained();
  return loaded;
}

nlohmann::json diagnostics_json(const ColorizeDiagnostics& diag,
                                const std::vector<int64_t>& query_filter) {
  nlohmann::json j;
  if (diag.selection.has_value()) {
    auto cam = diag.selection->cam.to(torch::kFloat64);
    std::vector<double> cam_v(cam.data_ptr<double>(), cam.data_ptr<double>() + cam.numel());
    j["selection"] = {{"cam", cam_v},
                      {"topk", diag.selection->topk},
                      {"random", diag.selection->random}};
    j["key_indices"] = diag.selection->all();
  } else {
    auto n = diag.attention.weights.size(2);
    std::vector<int64_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    j["key_indices"] = all;
  }

  auto w = diag.attention.weights.to(torch::kFloat64);  // (1,R,K)
  const auto rows = w.size(1);
  std::vector<int64_t> queries = query_filter;
  if (queries.empty()) {
    queries.resize(rows);
    std::iota(queries.begin(), queries.end(), 0);
  }
  auto keys = j["key_indices"].get<std::vector<int64_t>>();
  j["rows"] = nlohmann::json::array();
  for (auto qi : queries) {
    TORCH_CHECK(qi >= 0 && qi < rows, "query index out of range");
    auto row = w[0][qi];
    std::vector<double> weights(row.data_ptr<double>(), row.data_ptr<double>() + row.numel());
    j["rows"].push_back(
        {{"query_index", qi}, {"key_indices", keys}, {"weights", weights}});
  }
  return j;
}

}  // namespace sscn
