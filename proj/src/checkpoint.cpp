#include <sstream>

#include "facefusion/binary_io.hpp"
#include "facefusion/config.hpp"
#include "facefusion/error.hpp"
#include "facefusion/trainer.hpp"

namespace facefusion {
namespace {

constexpr const char* kCheckpointMagic = "FFCKPT";

void put_net(io::ByteWriter& w, const NetParams& p) {
  w.put<std::uint64_t>(p.layers.size());
  for (const auto& l : p.layers) {
    w.put_matrix(l.weight);
    w.put_vector(l.bias);
  }
}

NetParams get_net(io::ByteReader& r) {
  NetParams p;
  const auto n = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    DenseLayer l;
    l.weight = r.get_matrix();
    l.bias = r.get_vector();
    if (l.bias.size() != l.weight.cols()) fail(ErrorKind::Format, "layer bias does not match weight");
    if (!p.layers.empty() && p.layers.back().weight.cols() != l.weight.rows())
      fail(ErrorKind::Format, "layer shapes do not chain");
    p.layers.push_back(std::move(l));
  }
  return p;
}

void put_head(io::ByteWriter& w, const DomainHeadParams& h) {
  w.put_matrix(h.weight);
  w.put_vector(h.bias);
}

DomainHeadParams get_head(io::ByteReader& r) {
  DomainHeadParams h;
  h.weight = r.get_matrix();
  h.bias = r.get_vector();
  return h;
}

}  // namespace

void write_checkpoint(const TrainState& s, const TrainConfig& cfg, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.put<std::int64_t>(s.step);
  w.put<std::uint8_t>(s.phase == Phase::Aware ? 0 : 1);
  w.put<std::uint8_t>(s.fused ? 1 : 0);
  put_net(w, s.net);
  w.put_matrix(s.proxies.proxies);
  w.put_array(s.proxies.dataset_of);
  w.put_array(s.proxies.active);
  put_head(w, s.head);
  put_net(w, s.net_momentum);
  w.put_matrix(s.proxy_momentum);
  put_head(w, s.head_momentum);
  w.put_array(s.merge_map.remap);
  std::ostringstream rng;
  rng << s.rng;
  w.put_string(rng.str());

  io::Header h{kCheckpointMagic, kCheckpointFormatVersion, {}};
  h.echo = {{"step", std::to_string(s.step)},
            {"phase", std::string(to_string(s.phase))},
            {"active_classes", std::to_string(count_active(s.proxies))},
            {"config", to_json(cfg).dump()}};
  io::write_container(path, h, w.bytes());
}

TrainState read_checkpoint(const std::filesystem::path& path, std::string* config_json) {
  auto [header, r] = io::read_container(path, kCheckpointMagic, kCheckpointFormatVersion);
  if (config_json) *config_json = header.get("config");
  TrainState s;
  s.step = r.get<std::int64_t>();
  s.phase = r.get<std::uint8_t>() == 0 ? Phase::Aware : Phase::Agnostic;
  s.fused = r.get<std::uint8_t>() != 0;
  s.net = get_net(r);
  s.proxies.proxies = r.get_matrix();
  s.proxies.dataset_of = r.get_array<DatasetId>();
  s.proxies.active = r.get_array<std::uint8_t>();
  s.head = get_head(r);
  s.net_momentum = get_net(r);
  s.proxy_momentum = r.get_matrix();
  s.head_momentum = get_head(r);
  s.merge_map.remap = r.get_array<ClassId>();
  std::istringstream rng(r.get_string());
  rng >> s.rng;
  if (rng.fail()) fail(ErrorKind::Format, "checkpoint RNG state is malformed");
  r.expect_end();
  const auto C = static_cast<std::size_t>(s.proxies.proxies.rows());
  if (s.proxies.dataset_of.size() != C || s.proxies.active.size() != C || s.merge_map.remap.size() != C)
    fail(ErrorKind::Format, "checkpoint class tables disagree in length");
  return s;
}

}  // namespace facefusion
