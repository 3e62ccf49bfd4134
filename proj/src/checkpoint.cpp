#include "imuge/checkpoint.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"

#include "imuge/digest.hpp"
#include "imuge/errors.hpp"

namespace imuge {
namespace {

using nlohmann::json;

constexpr const char* kMagic = "IMUGECKPT";

json meta_to_json(const CheckpointMeta& m) {
  return json{{"version", m.version},
              {"config_hash", m.config_hash},
              {"stage", m.phase.stage},
              {"fade", m.phase.fade},
              {"decoupled", m.phase.decoupled},
              {"epoch", m.phase.epoch},
              {"step", m.phase.step},
              {"next_step", m.next_step},
              {"lifted", m.lifted},
              {"monitor",
               {{"current", m.monitor.current},
                {"previous_mean", m.monitor.previous_mean},
                {"stale", m.monitor.stale},
                {"converged", m.monitor.converged}}}};
}

CheckpointMeta meta_from_json(const json& j) {
  CheckpointMeta m;
  m.version = j.at("version").get<int>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.phase.stage = j.at("stage").get<int>();
  m.phase.fade = j.at("fade").get<double>();
  m.phase.decoupled = j.at("decoupled").get<bool>();
  m.phase.epoch = j.at("epoch").get<int64_t>();
  m.phase.step = j.at("step").get<int64_t>();
  m.next_step = j.at("next_step").get<int64_t>();
  m.lifted = j.at("lifted").get<bool>();
  const auto& mon = j.at("monitor");
  m.monitor.current = mon.at("current").get<std::vector<double>>();
  m.monitor.previous_mean = mon.at("previous_mean").get<double>();
  m.monitor.stale = mon.at("stale").get<int64_t>();
  m.monitor.converged = mon.at("converged").get<bool>();
  return m;
}

struct Container {
  CheckpointMeta meta;
  std::string payload;
};

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string magic, header;
  if (!std::getline(in, magic) || magic != kMagic) {
    throw CheckpointError(path.string() + " is not a checkpoint (bad magic line)");
  }
  if (!std::getline(in, header)) throw CheckpointError(path.string() + ": missing header");
  json h;
  try {
    h = json::parse(header);
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": corrupt header: " + e.what());
  }
  Container c;
  try {
    c.meta = meta_from_json(h);
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": incomplete header: " + e.what());
  }
  if (c.meta.version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": checkpoint version " + std::to_string(c.meta.version) +
                          " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto bytes = h.value("payload_bytes", int64_t{-1});
  const auto digest = h.value("sha256", std::string{});
  std::stringstream ss;
  ss << in.rdbuf();
  c.payload = ss.str();
  if (bytes < 0 || static_cast<int64_t>(c.payload.size()) != bytes) {
    throw CheckpointError(path.string() + ": payload size mismatch (truncated or modified file)");
  }
  if (sha256_hex(c.payload) != digest) {
    throw CheckpointError(path.string() + ": payload digest mismatch (file is corrupted)");
  }
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, ImugeModel& model, const NamedOptimizers& optimizers,
                     const CheckpointMeta& meta) {
  torch::serialize::OutputArchive archive;
  torch::serialize::OutputArchive model_archive;
  model->save(model_archive);
  archive.write("model", model_archive);
  for (const auto& [name, opt] : optimizers) {
    torch::serialize::OutputArchive opt_archive;
    opt->save(opt_archive);
    archive.write("optim." + name, opt_archive);
  }
  std::ostringstream payload_stream;
  archive.save_to(payload_stream);
  const std::string payload = payload_stream.str();

  json header = meta_to_json(meta);
  header["version"] = kCheckpointVersion;
  header["payload_bytes"] = static_cast<int64_t>(payload.size());
  header["sha256"] = sha256_hex(payload);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write to a sibling and rename so an interrupted save never leaves a half file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
    out << kMagic << '\n' << header.dump() << '\n';
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw CheckpointError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointMeta load_checkpoint(const std::filesystem::path& path, ImugeModel& model,
                               const NamedOptimizers& optimizers, const std::string& expected_hash,
                               std::ostream* warnings) {
  auto c = read_container(path);
  if (!expected_hash.empty() && c.meta.config_hash != expected_hash) {
    std::ostream& w = warnings ? *warnings : std::cerr;
    w << "warning: checkpoint " << path.string() << " was written with config " << c.meta.config_hash
      << ", current config is " << expected_hash << "\n";
  }
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(c.payload.data(), c.payload.size());
    torch::serialize::InputArchive model_archive;
    archive.read("model", model_archive);
    model->load(model_archive);
    for (const auto& [name, opt] : optimizers) {
      torch::serialize::InputArchive opt_archive;
      if (!archive.try_read("optim." + name, opt_archive)) {
        throw CheckpointError(path.string() + ": no optimizer state named " + name);
      }
      opt->load(opt_archive);
    }
  } catch (const c10::Error& e) {
    throw CheckpointError(path.string() + ": payload does not match the model: " + e.what_without_backtrace());
  }
  return c.meta;
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) { return read_container(path).meta; }

}  // namespace imuge
