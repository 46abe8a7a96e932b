#include "checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

namespace stpt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr char kMagic[8] = {'S', 'T', 'P', 'T', 'C', 'K', 'P', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
  out.append(reinterpret_cast<const char*>(&v), 4);
}

ordered_json config_json(const ModelConfig& c) {
  return ordered_json{{"T", c.T},     {"H", c.H},     {"N", c.N},
                      {"C", c.C},     {"D", c.D},     {"l_t", c.l_t},
                      {"l_s", c.l_s}, {"heads", c.heads}, {"d_ff", c.d_ff}};
}

ModelConfig config_from_json(const ordered_json& j) {
  ModelConfig c;
  c.T = j.at("T");
  c.H = j.at("H");
  c.N = j.at("N");
  c.C = j.at("C");
  c.D = j.at("D");
  c.l_t = j.at("l_t");
  c.l_s = j.at("l_s");
  c.heads = j.at("heads");
  c.d_ff = j.at("d_ff");
  c.validate();
  return c;
}

std::vector<std::pair<std::string, Tensor>> all_arrays(Checkpoint& ckpt) {
  auto arrays = ckpt.params.named_all();
  for (auto& [n, t] : ckpt.prompts.named()) arrays.emplace_back(n, t);
  arrays.emplace_back(
      "normalizer.min",
      Tensor({ckpt.normalizer.min.size()}, ckpt.normalizer.min));
  arrays.emplace_back(
      "normalizer.max",
      Tensor({ckpt.normalizer.max.size()}, ckpt.normalizer.max));
  return arrays;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  Checkpoint& self = const_cast<Checkpoint&>(*this);
  auto arrays = all_arrays(self);

  ordered_json header;
  header["config"] = config_json(config);
  header["prompt"] = ordered_json{{"variant", variant_name(prompts.spec.kind)},
                                  {"n_st", prompts.spec.n_st},
                                  {"n_ti", prompts.spec.n_ti}};
  header["strategy"] = strategy;
  header["seed"] = seed;
  header["epochs_run"] = epochs_run;
  header["final_val_loss"] = final_val_loss;
  header["target_attribute"] = target_attribute;
  header["target_attribute_name"] = target_attribute_name;
  header["trainable_count"] = trainable_count;
  header["attribute_names"] = attribute_names;

  ordered_json dir = ordered_json::array();
  std::uint64_t offset = 0;
  for (auto& [name, t] : arrays) {
    dir.push_back(ordered_json{
        {"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size() * sizeof(double);
  }
  header["arrays"] = dir;

  const std::string header_bytes = header.dump();
  std::string blob;
  blob.append(kMagic, sizeof(kMagic));
  put_u32(blob, kVersion);
  put_u32(blob, static_cast<std::uint32_t>(header_bytes.size()));
  blob += header_bytes;
  for (auto& [name, t] : arrays)
    blob.append(reinterpret_cast<const char*>(t.values().data()),
                t.size() * sizeof(double));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw DataError("write failed for checkpoint '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  std::string blob((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (blob.size() < 16 || std::memcmp(blob.data(), kMagic, 8) != 0)
    throw DataError("'" + path + "' is not a checkpoint file");
  std::uint32_t version = 0, header_len = 0;
  std::memcpy(&version, blob.data() + 8, 4);
  std::memcpy(&header_len, blob.data() + 12, 4);
  if (version != kVersion)
    throw DataError("unsupported checkpoint version " +
                    std::to_string(version));
  if (blob.size() < 16 + static_cast<std::size_t>(header_len))
    throw DataError("truncated checkpoint header");

  ordered_json header;
  try {
    header = ordered_json::parse(blob.substr(16, header_len));
  } catch (const std::exception& e) {
    throw DataError(std::string("bad checkpoint header: ") + e.what());
  }

  Checkpoint ckpt;
  ckpt.config = config_from_json(header.at("config"));
  const auto& pj = header.at("prompt");
  PromptSpec spec;
  const std::string vname = pj.at("variant");
  auto variant = parse_variant(vname);
  if (!variant) throw DataError("unknown prompt variant '" + vname + "'");
  spec.kind = *variant;
  spec.n_st = pj.at("n_st");
  spec.n_ti = pj.at("n_ti");
  ckpt.strategy = header.at("strategy");
  ckpt.seed = header.at("seed");
  ckpt.epochs_run = header.at("epochs_run");
  ckpt.final_val_loss = header.at("final_val_loss");
  ckpt.target_attribute = header.at("target_attribute");
  ckpt.target_attribute_name = header.at("target_attribute_name");
  ckpt.trainable_count = header.at("trainable_count");
  ckpt.attribute_names =
      header.at("attribute_names").get<std::vector<std::string>>();

  struct Entry {
    Shape shape;
    std::uint64_t offset;
  };
  std::map<std::string, Entry> directory;
  for (const auto& e : header.at("arrays"))
    directory[e.at("name")] = {e.at("shape").get<Shape>(), e.at("offset")};

  const char* payload = blob.data() + 16 + header_len;
  const std::size_t payload_len = blob.size() - 16 - header_len;
  auto fetch = [&](const std::string& name, const Shape& want) {
    auto it = directory.find(name);
    if (it == directory.end())
      throw ShapeError("checkpoint missing array '" + name + "'");
    if (it->second.shape != want)
      throw ShapeError("checkpoint array '" + name + "' has shape " +
                       shape_str(it->second.shape) + ", expected " +
                       shape_str(want));
    const std::size_t bytes = numel(want) * sizeof(double);
    if (it->second.offset + bytes > payload_len)
      throw DataError("checkpoint array '" + name + "' extends past payload");
    std::vector<double> data(numel(want));
    std::memcpy(data.data(), payload + it->second.offset, bytes);
    directory.erase(it);
    return Tensor(want, std::move(data));
  };

  // Build skeletons with the right layer counts, then overwrite every array.
  ckpt.params = init_parameters(ckpt.config, 0);
  ckpt.params.for_each([&](const std::string& name, Tensor& t) {
    t = fetch(name, t.shape());
  });
  ckpt.prompts = init_prompts(spec, ckpt.config, 0);
  ckpt.prompts.for_each([&](const std::string& name, Tensor& t) {
    t = fetch(name, t.shape());
  });
  const Shape nshape{ckpt.attribute_names.size()};
  const Tensor nmin = fetch("normalizer.min", nshape);
  const Tensor nmax = fetch("normalizer.max", nshape);
  ckpt.normalizer.min = nmin.values();
  ckpt.normalizer.max = nmax.values();
  if (!directory.empty())
    throw ShapeError("checkpoint has unexpected array '" +
                     directory.begin()->first + "'");
  return ckpt;
}

Checkpoint Checkpoint::from_result(const TrainResult& result,
                                   const GridSeries& trained_on,
                                   Strategy strategy, std::uint64_t seed,
                                   std::int64_t target_attribute) {
  Checkpoint ckpt;
  ckpt.config = result.config;
  ckpt.params = result.params;
  ckpt.prompts = result.prompts;
  ckpt.normalizer = result.normalizer;
  ckpt.attribute_names = trained_on.attribute_names;
  ckpt.strategy = strategy_name(strategy);
  ckpt.seed = seed;
  ckpt.epochs_run = result.epochs_run;
  ckpt.final_val_loss = result.best_val_loss;
  ckpt.target_attribute = target_attribute;
  if (target_attribute >= 0) {
    // Tuned checkpoints carry the already-selected series (C == 1); the
    // index refers to the original dataset and is kept as provenance.
    if (trained_on.attributes() == 1)
      ckpt.target_attribute_name = trained_on.attribute_names[0];
    else if (static_cast<std::size_t>(target_attribute) <
             trained_on.attributes())
      ckpt.target_attribute_name =
          trained_on.attribute_names[static_cast<std::size_t>(target_attribute)];
  }
  ckpt.trainable_count = result.trainable_count;
  return ckpt;
}

}  // namespace stpt
