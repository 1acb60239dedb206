// SPDX-License-Identifier: Apache-2.0
#include "shallowpi/io.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "shallowpi/error.hpp"

namespace shallowpi {

using nlohmann::json;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, "cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrorKind::Io, "write to '" + path.string() + "' failed");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  require(EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) == 1,
          ErrorKind::Io, "sha256: digest computation failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

namespace {

std::string fmt(double v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc() && end == s.data() + s.size(), ErrorKind::Format,
          "cannot parse " + what + " '" + s + "'");
  return v;
}

std::int64_t parse_int(const std::string& s, const std::string& what) {
  std::int64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc() && end == s.data() + s.size(), ErrorKind::Format,
          "cannot parse " + what + " '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

// ---- spec json ----

const char* layout_name(BlockLayout l) {
  return l == BlockLayout::PostActivation ? "post_activation" : "pre_activation";
}

BlockLayout layout_from(const std::string& s) {
  if (s == "post_activation") return BlockLayout::PostActivation;
  if (s == "pre_activation") return BlockLayout::PreActivation;
  fail(ErrorKind::Format, "unknown block layout '" + s + "'");
}

BlockState state_from(const std::string& s) {
  if (s == "deep") return BlockState::Deep;
  if (s == "gated") return BlockState::Gated;
  if (s == "fused") return BlockState::Fused;
  fail(ErrorKind::Format, "unknown block state '" + s + "'");
}

json conv_json(const ConvSpec& c) {
  return {{"name", c.name},       {"in_channels", c.in_channels}, {"out_channels", c.out_channels},
          {"kernel", c.kernel},   {"stride", c.stride},           {"padding", c.padding},
          {"bias", c.bias}};
}

ConvSpec conv_from(const json& j) {
  return {j.at("name").get<std::string>(), j.at("in_channels").get<int>(),
          j.at("out_channels").get<int>(),  j.at("kernel").get<int>(),
          j.at("stride").get<int>(),        j.at("padding").get<int>(),
          j.at("bias").get<bool>()};
}

json bn_json(const BnSpec& b) {
  return {{"name", b.name}, {"channels", b.channels}, {"eps", b.eps}, {"momentum", b.momentum}};
}

BnSpec bn_from(const json& j) {
  return {j.at("name").get<std::string>(), j.at("channels").get<int>(), j.at("eps").get<double>(),
          j.at("momentum").get<double>()};
}

json linear_json(const LinearSpec& l) {
  return {{"name", l.name}, {"in_features", l.in_features}, {"out_features", l.out_features}};
}

LinearSpec linear_from(const json& j) {
  return {j.at("name").get<std::string>(), j.at("in_features").get<int>(),
          j.at("out_features").get<int>()};
}

template <class T, class F>
json opt_json(const std::optional<T>& v, F f) {
  return v ? f(*v) : json(nullptr);
}

template <class T, class F>
std::optional<T> opt_from(const json& j, const char* key, F f) {
  const auto& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  return f(v);
}

json block_json(const BlockSpec& b) {
  return {{"id", b.id},
          {"layout", layout_name(b.layout)},
          {"state", to_string(b.state)},
          {"in_size", b.in_size},
          {"out_size", b.out_size},
          {"entry_bn", opt_json(b.entry_bn, bn_json)},
          {"entry_relu", b.entry_relu},
          {"conv1", opt_json(b.conv1, conv_json)},
          {"mid_bn", opt_json(b.mid_bn, bn_json)},
          {"mid_relu", b.mid_relu},
          {"conv2", opt_json(b.conv2, conv_json)},
          {"exit_bn", opt_json(b.exit_bn, bn_json)},
          {"shallow_conv", opt_json(b.shallow_conv, conv_json)},
          {"shallow_bn", opt_json(b.shallow_bn, bn_json)},
          {"proj", opt_json(b.proj, conv_json)},
          {"proj_bn", opt_json(b.proj_bn, bn_json)},
          {"out_relu", b.out_relu}};
}

BlockSpec block_from(const json& j) {
  BlockSpec b;
  b.id = j.at("id").get<std::string>();
  b.layout = layout_from(j.at("layout").get<std::string>());
  b.state = state_from(j.at("state").get<std::string>());
  b.in_size = j.at("in_size").get<int>();
  b.out_size = j.at("out_size").get<int>();
  b.entry_bn = opt_from<BnSpec>(j, "entry_bn", bn_from);
  b.entry_relu = j.at("entry_relu").get<std::string>();
  b.conv1 = opt_from<ConvSpec>(j, "conv1", conv_from);
  b.mid_bn = opt_from<BnSpec>(j, "mid_bn", bn_from);
  b.mid_relu = j.at("mid_relu").get<std::string>();
  b.conv2 = opt_from<ConvSpec>(j, "conv2", conv_from);
  b.exit_bn = opt_from<BnSpec>(j, "exit_bn", bn_from);
  b.shallow_conv = opt_from<ConvSpec>(j, "shallow_conv", conv_from);
  b.shallow_bn = opt_from<BnSpec>(j, "shallow_bn", bn_from);
  b.proj = opt_from<ConvSpec>(j, "proj", conv_from);
  b.proj_bn = opt_from<BnSpec>(j, "proj_bn", bn_from);
  b.out_relu = j.at("out_relu").get<std::string>();
  return b;
}

}  // namespace

std::string to_string(BlockState state) {
  switch (state) {
    case BlockState::Deep: return "deep";
    case BlockState::Gated: return "gated";
    case BlockState::Fused: return "fused";
  }
  return "deep";
}

std::string to_string(Head head) { return head == Head::Main ? "main" : "aux"; }

json spec_to_json(const NetworkSpec& spec) {
  json groups = json::array();
  for (const auto& g : spec.groups) {
    json blocks = json::array();
    for (const auto& b : g) blocks.push_back(block_json(b));
    groups.push_back(std::move(blocks));
  }
  json aux = nullptr;
  if (spec.aux) aux = {{"cut_group", spec.aux->cut_group}, {"head", linear_json(spec.aux->head)}};
  return {{"name", spec.name},
          {"layout", layout_name(spec.layout)},
          {"in_channels", spec.in_channels},
          {"input_size", spec.input_size},
          {"num_classes", spec.num_classes},
          {"stem_conv", conv_json(spec.stem_conv)},
          {"stem_bn", opt_json(spec.stem_bn, bn_json)},
          {"stem_relu", spec.stem_relu},
          {"groups", std::move(groups)},
          {"head_bn", opt_json(spec.head_bn, bn_json)},
          {"head_relu", spec.head_relu},
          {"classifier", linear_json(spec.classifier)},
          {"aux_classifier", std::move(aux)}};
}

NetworkSpec spec_from_json(const json& j) {
  NetworkSpec s;
  try {
    s.name = j.at("name").get<std::string>();
    s.layout = layout_from(j.at("layout").get<std::string>());
    s.in_channels = j.at("in_channels").get<int>();
    s.input_size = j.at("input_size").get<int>();
    s.num_classes = j.at("num_classes").get<int>();
    s.stem_conv = conv_from(j.at("stem_conv"));
    s.stem_bn = opt_from<BnSpec>(j, "stem_bn", bn_from);
    s.stem_relu = j.at("stem_relu").get<std::string>();
    for (const auto& g : j.at("groups")) {
      std::vector<BlockSpec> blocks;
      for (const auto& b : g) blocks.push_back(block_from(b));
      s.groups.push_back(std::move(blocks));
    }
    s.head_bn = opt_from<BnSpec>(j, "head_bn", bn_from);
    s.head_relu = j.at("head_relu").get<std::string>();
    s.classifier = linear_from(j.at("classifier"));
    const auto& aux = j.at("aux_classifier");
    if (!aux.is_null()) s.aux = AuxClassifier{aux.at("cut_group").get<int>(), linear_from(aux.at("head"))};
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("network spec json: ") + e.what());
  }
  validate(s);
  return s;
}

std::string profile_to_csv(const SensitivityProfile& profile) {
  std::string out = "layer_id,positions,eta_theta,eta_alpha,budget\n";
  for (const auto& l : profile.layers) {
    out += l.layer_id + "," + std::to_string(l.positions) + "," + fmt(l.eta_theta) + "," +
           fmt(l.eta_alpha) + "," + std::to_string(l.budget) + "\n";
  }
  return out;
}

SensitivityProfile profile_from_csv(const std::string& csv, const NetworkSpec* spec) {
  std::istringstream in(csv);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)) &&
              line == "layer_id,positions,eta_theta,eta_alpha,budget",
          ErrorKind::Format, "profile csv: missing or unexpected header");
  std::map<std::string, ReluSite> sites;
  if (spec) {
    for (const auto& s : relu_sites(*spec)) sites.emplace(s.id, s);
  }
  SensitivityProfile p;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    require(f.size() == 5, ErrorKind::Format,
            "profile csv: row " + std::to_string(row) + " has " + std::to_string(f.size()) +
                " fields, expected 5");
    LayerSensitivity l;
    l.layer_id = f[0];
    l.positions = parse_int(f[1], "positions");
    l.eta_theta = parse_double(f[2], "eta_theta");
    l.eta_alpha = parse_double(f[3], "eta_alpha");
    l.budget = parse_int(f[4], "budget");
    require(l.budget >= 0 && l.budget <= l.positions, ErrorKind::Format,
            "profile csv: budget of '" + l.layer_id + "' outside [0, positions]");
    if (spec) {
      auto it = sites.find(l.layer_id);
      require(it != sites.end(), ErrorKind::Format,
              "profile csv: layer '" + l.layer_id + "' is not a ReLU site of '" + spec->name + "'");
      require(it->second.positions() == l.positions, ErrorKind::Format,
              "profile csv: positions of '" + l.layer_id + "' disagree with the network");
      l.block_id = it->second.block_id;
      l.is_stem = it->second.is_stem;
      l.is_mid = it->second.is_mid;
    }
    p.global_budget += l.budget;
    p.layers.push_back(std::move(l));
  }
  return p;
}

namespace {

constexpr char kMaskMagic[8] = {'S', 'P', 'I', 'M', 'A', 'S', 'K', '1'};

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  template <class T>
  T le(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }

  std::span<const std::uint8_t> bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == b_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    require(b_.size() - pos_ >= n, ErrorKind::Format,
            std::string("mask checkpoint truncated reading ") + what + " at byte offset " +
                std::to_string(pos_));
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_masks(const MaskSet& masks) {
  std::vector<std::uint8_t> out(std::begin(kMaskMagic), std::end(kMaskMagic));
  put_le<std::uint32_t>(out, 1);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(masks.size()));
  for (const auto& [id, m] : masks) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(id.size()));
    out.insert(out.end(), id.begin(), id.end());
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.channels()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.height()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.width()));
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.popcount()));
    std::vector<std::uint8_t> packed((m.size() + 7) / 8, 0);
    const auto& bits = m.bits();
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (bits[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    }
    out.insert(out.end(), packed.begin(), packed.end());
  }
  return out;
}

MaskSet decode_masks(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.bytes(8, "magic");
  require(std::memcmp(magic.data(), kMaskMagic, 8) == 0, ErrorKind::Format,
          "mask checkpoint: bad magic");
  const auto version = r.le<std::uint32_t>("version");
  require(version == 1, ErrorKind::Format,
          "mask checkpoint: unsupported version " + std::to_string(version));
  const auto layers = r.le<std::uint32_t>("layer count");
  MaskSet out;
  for (std::uint32_t l = 0; l < layers; ++l) {
    const auto id_len = r.le<std::uint32_t>("id length");
    const auto id_bytes = r.bytes(id_len, "layer id");
    std::string id(id_bytes.begin(), id_bytes.end());
    const auto c = r.le<std::uint32_t>("channels");
    const auto h = r.le<std::uint32_t>("height");
    const auto w = r.le<std::uint32_t>("width");
    const auto pop = r.le<std::uint64_t>("popcount");
    const std::size_t n = static_cast<std::size_t>(c) * h * w;
    const auto packed = r.bytes((n + 7) / 8, "mask bits");
    std::vector<std::uint8_t> bits(n);
    for (std::size_t i = 0; i < n; ++i) bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
    ReluMask m(id, static_cast<int>(c), static_cast<int>(h), static_cast<int>(w), std::move(bits));
    require(static_cast<std::uint64_t>(m.popcount()) == pop, ErrorKind::Format,
            "mask checkpoint: popcount of '" + id + "' disagrees with its bits");
    m.freeze();
    require(out.emplace(id, std::move(m)).second, ErrorKind::Format,
            "mask checkpoint: duplicate layer '" + id + "'");
  }
  require(r.done(), ErrorKind::Format,
          "mask checkpoint: trailing bytes at offset " + std::to_string(r.pos()));
  return out;
}

namespace {

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  return std::filesystem::path(stem.string() + ext);
}

}  // namespace

std::string write_weights(const std::filesystem::path& stem, const ParamStore& params,
                          const json& extra) {
  std::vector<std::uint8_t> blob;
  json tensors = json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : params.tensors) {
    for (double v : t.data()) put_le<std::uint64_t>(blob, std::bit_cast<std::uint64_t>(v));
    tensors.push_back({{"name", name},
                       {"shape", t.shape()},
                       {"offset", offset},
                       {"trainable", params.trainable.at(name)}});
    offset += t.numel();
  }
  const auto digest = sha256_hex(blob);
  json manifest = extra;
  manifest["format"] = "shallowpi-weights-v1";
  manifest["dtype"] = "float64-le";
  manifest["values"] = offset;
  manifest["sha256"] = digest;
  manifest["tensors"] = std::move(tensors);
  write_file(with_ext(stem, ".bin"), blob);
  write_text(with_ext(stem, ".json"), manifest.dump(2) + "\n");
  return digest;
}

json read_manifest(const std::filesystem::path& stem) {
  const auto path = with_ext(stem, ".json");
  const auto bytes = read_file(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, "weights manifest '" + path.string() + "': " + e.what());
  }
}

ParamStore read_weights(const std::filesystem::path& stem) {
  const json manifest = read_manifest(stem);
  const auto blob = read_file(with_ext(stem, ".bin"));
  require(sha256_hex(blob) == manifest.at("sha256").get<std::string>(), ErrorKind::Format,
          "weights '" + stem.string() + "': digest mismatch");
  const auto values = manifest.at("values").get<std::size_t>();
  require(blob.size() == values * 8, ErrorKind::Format,
          "weights '" + stem.string() + "': block holds " + std::to_string(blob.size()) +
              " bytes, manifest expects " + std::to_string(values * 8));
  ParamStore params;
  for (const auto& t : manifest.at("tensors")) {
    const auto shape = t.at("shape").get<Shape>();
    const auto offset = t.at("offset").get<std::size_t>();
    const auto n = shape_numel(shape);
    require(offset + n <= values, ErrorKind::Format,
            "weights: tensor '" + t.at("name").get<std::string>() + "' overruns the block");
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t u = 0;
      for (std::size_t b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(blob[(offset + i) * 8 + b]) << (8 * b);
      data[i] = std::bit_cast<double>(u);
    }
    params.put(t.at("name").get<std::string>(), Tensor(shape, std::move(data)),
               t.at("trainable").get<bool>());
  }
  return params;
}

std::string history_to_csv(const std::vector<HistoryRow>& history) {
  std::string out = "epoch,lr,gamma,loss_total,loss_kl,loss_ce,loss_pram,acc_main,acc_aux\n";
  for (const auto& h : history) {
    out += std::to_string(h.epoch) + "," + fmt(h.lr) + "," + fmt(h.gamma) + "," +
           fmt(h.loss_total) + "," + fmt(h.loss_kl) + "," + fmt(h.loss_ce) + "," +
           fmt(h.loss_pram) + "," + fmt(h.acc_main) + "," + (h.acc_aux ? fmt(*h.acc_aux) : "") +
           "\n";
  }
  return out;
}

json cost_report_to_json(const CostReport& r) {
  json j = {{"head", to_string(r.head)},
            {"relu_positions_total", r.relu_positions_total},
            {"relus_kept", r.relus_kept},
            {"relu_ops_reduction", r.relu_ops_reduction.value()},
            {"macs", r.macs},
            {"baseline_macs", r.baseline_macs},
            {"mac_saving", r.mac_saving.value()},
            {"depth", r.depth},
            {"latency_estimate", nullptr}};
  if (r.latency_estimate) j["latency_estimate"] = *r.latency_estimate;
  return j;
}

std::string cost_report_to_csv(const std::vector<CostReport>& reports,
                               const std::vector<std::string>& labels) {
  require(reports.size() == labels.size(), ErrorKind::InvalidArgument,
          "cost_report_to_csv: one label per report required");
  std::string out =
      "label,head,relu_positions_total,relus_kept,relu_ops_reduction,macs,baseline_macs,"
      "mac_saving,depth,latency_estimate\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    out += labels[i] + "," + to_string(r.head) + "," + std::to_string(r.relu_positions_total) +
           "," + std::to_string(r.relus_kept) + "," + fmt(r.relu_ops_reduction.value()) + "," +
           std::to_string(r.macs) + "," + std::to_string(r.baseline_macs) + "," +
           fmt(r.mac_saving.value()) + "," + std::to_string(r.depth) + "," +
           (r.latency_estimate ? fmt(*r.latency_estimate) : "") + "\n";
  }
  return out;
}

std::string results_to_csv(const std::vector<ResultRow>& rows) {
  std::string out =
      "label,gated_branching,ac_output,relus_k,accuracy,depth,mac_saving,relu_ops_reduction\n";
  for (const auto& r : rows) {
    out += r.label + "," + (r.gated_branching ? "1" : "0") + "," + (r.ac_output ? "1" : "0") +
           "," + fmt(static_cast<double>(r.relus_kept) / 1000.0) + "," + fmt(r.accuracy) + "," +
           std::to_string(r.depth) + "," + fmt(r.mac_saving) + "," + fmt(r.relu_ops_reduction) +
           "\n";
  }
  return out;
}

std::string fig1_to_csv(const std::vector<Fig1Row>& rows) {
  std::string out = "label,accuracy,relus,macs\n";
  for (const auto& r : rows) {
    out += r.label + "," + fmt(r.accuracy) + "," + fmt(r.relus) + "," + fmt(r.macs) + "\n";
  }
  return out;
}

}  // namespace shallowpi
