#include <gtest/gtest.h>

#include <filesystem>

#include "pdflow/checkpoint.hpp"

using namespace pdflow;

namespace {

FlowModel small_flow() {
  FlowConfig c;
  c.transforms = 2;
  c.hidden = 16;
  c.leading_affine = true;
  return FlowModel(c, 3);
}

EnergyModel small_ebm() {
  EnergyConfig c;
  c.blocks = 2;
  c.hidden = 16;
  c.temperature = 2.0;
  c.init_power_iterations = 5;
  return EnergyModel(c, 4);
}

std::string temp_path(const char* name) { return (std::filesystem::temp_directory_path() / name).string(); }

}  // namespace

TEST(Checkpoint, FlowRoundTripIsExact) {
  FlowModel flow = small_flow();
  Rng rng(1);
  flow.params().values() += 0.01 * standard_normal(flow.params().size(), 1, rng).col(0);
  const auto path = temp_path("pdflow_flow_ckpt.json");
  save_checkpoint(path, checkpoint_json(flow));
  const FlowModel back = flow_from_checkpoint(load_checkpoint(path));
  std::filesystem::remove(path);
  EXPECT_EQ(back.params().values(), flow.params().values());
  EXPECT_EQ(back.config().leading_affine, true);
  const Matrix x = standard_normal(50, 2, rng);
  EXPECT_EQ(back.log_prob(x), flow.log_prob(x));
}

TEST(Checkpoint, EnergyRoundTripKeepsPowerStates) {
  EnergyModel ebm = small_ebm();
  ebm.power_iteration(3);
  const auto path = temp_path("pdflow_ebm_ckpt.json");
  save_checkpoint(path, checkpoint_json(ebm));
  EnergyModel back = energy_from_checkpoint(load_checkpoint(path));
  std::filesystem::remove(path);
  EXPECT_EQ(back.params().values(), ebm.params().values());
  EXPECT_DOUBLE_EQ(back.temperature(), 2.0);
  Rng rng(2);
  const Matrix x = standard_normal(50, 2, rng);
  EXPECT_EQ(back.energy(x), ebm.energy(x));
  // Continuing power iteration from the restored vectors matches the original.
  ebm.power_iteration(1);
  back.power_iteration(1);
  EXPECT_EQ(back.energy(x), ebm.energy(x));
}

TEST(Checkpoint, MismatchesAreErrors) {
  const auto flow_json = checkpoint_json(small_flow());
  const auto ebm_json = checkpoint_json(small_ebm());
  EXPECT_THROW(energy_from_checkpoint(flow_json), Error);
  EXPECT_THROW(flow_from_checkpoint(ebm_json), Error);

  auto bad_version = flow_json;
  bad_version["version"] = kCheckpointVersion + 1;
  EXPECT_THROW(flow_from_checkpoint(bad_version), Error);

  auto bad_layout = ebm_json;
  bad_layout["layout"][0]["size"] = bad_layout["layout"][0]["size"].get<Index>() + 1;
  EXPECT_THROW(energy_from_checkpoint(bad_layout), Error);

  auto bad_config = flow_json;
  bad_config["config"]["hidden"] = 17;
  EXPECT_THROW(flow_from_checkpoint(bad_config), Error);

  auto bad_format = flow_json;
  bad_format["format"] = "something-else";
  EXPECT_THROW(flow_from_checkpoint(bad_format), Error);

  EXPECT_THROW(load_checkpoint(temp_path("pdflow_missing_ckpt.json")), Error);
}
