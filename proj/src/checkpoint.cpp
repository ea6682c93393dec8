#include "qann/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "qann/errors.hpp"

namespace qann {

namespace {

constexpr std::array<char, 8> kMagic = {'Q', 'A', 'N', 'N', 'C', 'K', 'P', 'T'};

template <class UInt>
void write_le(std::ostream& out, UInt value) {
  std::array<char, sizeof(UInt)> bytes{};
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  }
  out.write(bytes.data(), bytes.size());
}

template <class UInt>
UInt read_le(std::istream& in) {
  std::array<unsigned char, sizeof(UInt)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw DataError("checkpoint truncated");
  UInt value = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) value |= static_cast<UInt>(bytes[i]) << (8 * i);
  return value;
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> optional_double(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

struct TensorSlot {
  std::string name;
  Tensor* tensor;
};

std::vector<TensorSlot> tensor_slots(Checkpoint& c) {
  std::vector<TensorSlot> slots;
  visit_params(c.params, [&](const std::string& n, Tensor& t) { slots.push_back({"params/" + n, &t}); });
  visit_params(c.optimizer.first_moment,
               [&](const std::string& n, Tensor& t) { slots.push_back({"adam_m/" + n, &t}); });
  visit_params(c.optimizer.second_moment,
               [&](const std::string& n, Tensor& t) { slots.push_back({"adam_v/" + n, &t}); });
  return slots;
}

}  // namespace

nlohmann::ordered_json config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["hidden"] = c.hidden;
  j["hops"] = c.hops;
  j["lr0"] = c.lr0;
  j["batch_size"] = c.batch_size;
  j["checkpoint_every"] = c.checkpoint_every;
  j["dropout"] = c.dropout;
  j["seed"] = c.seed;
  j["max_epochs"] = c.max_epochs;
  j["embed_init_stddev"] = c.embed_init_stddev;
  j["identity_eo"] = c.identity_eo;
  j["dev_subsample"] = c.dev_subsample;
  j["threads"] = c.threads;
  return j;
}

TrainConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  TrainConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "hidden") c.hidden = value.get<std::size_t>();
      else if (key == "hops") c.hops = value.get<std::size_t>();
      else if (key == "lr0") c.lr0 = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "checkpoint_every") c.checkpoint_every = value.get<std::size_t>();
      else if (key == "dropout") c.dropout = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "max_epochs") c.max_epochs = value.get<std::size_t>();
      else if (key == "embed_init_stddev") c.embed_init_stddev = value.get<double>();
      else if (key == "identity_eo") c.identity_eo = value.get<bool>();
      else if (key == "dev_subsample") c.dev_subsample = value.get<std::size_t>();
      else if (key == "threads") c.threads = value.get<std::size_t>();
      else throw ConfigError("unknown training config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid training config: ") + e.what());
  }
  c.validate();
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, std::ostream& out) {
  Checkpoint& c = const_cast<Checkpoint&>(checkpoint);  // slots are only read here
  const auto slots = tensor_slots(c);

  nlohmann::ordered_json header;
  header["config"] = config_to_json(c.config);
  header["dims"] = {{"vocab", c.params.dims.vocab},
                    {"hidden", c.params.dims.hidden},
                    {"identity_eo", c.params.dims.identity_eo}};
  header["vocab"] = c.vocab;
  header["step"] = c.step;
  header["epoch"] = c.epoch;
  header["dev_accuracy"] = c.dev_accuracy;
  header["stopped"] = c.stopped;
  header["optimizer"] = {{"step", c.optimizer.step}, {"lr", c.optimizer.lr}};
  header["schedule"] = {{"lr", c.schedule.lr},
                        {"last_checkpoint_accuracy", optional_json(c.schedule.last_checkpoint_accuracy)},
                        {"last_epoch_accuracy", optional_json(c.schedule.last_epoch_accuracy)},
                        {"halvings", c.schedule.halvings}};
  nlohmann::ordered_json table = nlohmann::ordered_json::array();
  for (const auto& slot : slots) table.push_back({{"name", slot.name}, {"shape", slot.tensor->shape()}});
  header["tensors"] = std::move(table);

  const std::string text = header.dump();
  out.write(kMagic.data(), kMagic.size());
  write_le<std::uint32_t>(out, kCheckpointVersion);
  write_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& slot : slots) {
    for (double v : slot.tensor->data()) write_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw Error("failed writing checkpoint");
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  save_checkpoint(checkpoint, out);
}

Checkpoint load_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw DataError("not a checkpoint file (bad magic)");
  const auto version = read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = read_le<std::uint64_t>(in);
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("checkpoint header truncated");

  Checkpoint c;
  try {
    const auto header = nlohmann::json::parse(text);
    c.config = config_from_json(header.at("config"));
    const auto& dims = header.at("dims");
    const ModelDims model_dims{dims.at("vocab").get<std::size_t>(), dims.at("hidden").get<std::size_t>(),
                               dims.at("identity_eo").get<bool>()};
    c.vocab = header.at("vocab").get<std::vector<std::string>>();
    c.step = header.at("step").get<std::size_t>();
    c.epoch = header.at("epoch").get<std::size_t>();
    c.dev_accuracy = header.at("dev_accuracy").get<double>();
    c.stopped = header.at("stopped").get<bool>();
    c.params = ModelParams::zeros(model_dims);
    c.optimizer = OptimizerState::for_params(c.params, header.at("optimizer").at("lr").get<double>());
    c.optimizer.step = header.at("optimizer").at("step").get<std::size_t>();
    const auto& sched = header.at("schedule");
    c.schedule.lr = sched.at("lr").get<double>();
    c.schedule.last_checkpoint_accuracy = optional_double(sched.at("last_checkpoint_accuracy"));
    c.schedule.last_epoch_accuracy = optional_double(sched.at("last_epoch_accuracy"));
    c.schedule.halvings = sched.at("halvings").get<std::size_t>();

    const auto slots = tensor_slots(c);
    const auto& table = header.at("tensors");
    if (table.size() != slots.size()) throw DataError("checkpoint tensor table has wrong length");
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (table[i].at("name").get<std::string>() != slots[i].name ||
          table[i].at("shape").get<Shape>() != slots[i].tensor->shape()) {
        throw DataError("checkpoint tensor " + std::to_string(i) + " does not match " + slots[i].name +
                        " " + shape_string(slots[i].tensor->shape()));
      }
    }
    for (const auto& slot : slots) {
      for (double& v : slot.tensor->data()) v = std::bit_cast<double>(read_le<std::uint64_t>(in));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint header: ") + e.what());
  }
  if (c.vocab.size() != c.params.dims.vocab) throw DataError("checkpoint vocabulary size mismatch");
  return c;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

}  // namespace qann
