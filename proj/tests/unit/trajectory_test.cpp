#include "doctest.h"

#include <fstream>

#include "helpers.hpp"
#include "json.hpp"
#include "kis/harness/benchmark.hpp"
#include "kis/harness/trajectory.hpp"

using namespace kis;
using namespace kis::sim;

TEST_CASE("kept trajectories reach rank 1 on their last step only") {
  const auto c = synth_corpus({6000, 3, 16, 0.7, 12});
  TrajectoryOptions o;
  o.num_sessions = 60;
  o.seed = 4;
  TrajectoryStats stats;
  const auto records = generate_trajectories(c, o, &stats);
  CHECK(stats.sessions == 60);
  CHECK(stats.kept == static_cast<int>(records.size()));
  CHECK(stats.kept < stats.sessions);
  bool saw_three = false;
  for (const auto& r : records) {
    REQUIRE(r.terminal_step() >= 1);
    CHECK(r.terminal_step() <= o.params.max_steps);
    CHECK(r.steps.back().target_rank == 1);
    for (int t = 0; t + 1 < r.terminal_step(); ++t) CHECK(r.steps[static_cast<std::size_t>(t)].target_rank != 1);
    CHECK(r.initial_rank > 1);
    if (r.terminal_step() == 3) saw_three = true;
    for (const auto& s : r.steps) {
      CHECK(s.labels.size() == 5);
      CHECK(s.alignment.size() == 5);
      CHECK(s.alignment[0].size() == 3);
      CHECK(s.state_embeddings.size() == 3);
    }
  }
  CHECK(saw_three);

  SUBCASE("JSON lines round trip") {
    kis::test::TempDir dir("traj");
    write_trajectories(dir.path / "t.jsonl", records);
    const auto back = read_trajectories(dir.path / "t.jsonl");
    REQUIRE(back.size() == records.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK(back[i].seed == records[i].seed);
      CHECK(back[i].target == records[i].target);
      CHECK(back[i].terminal_step() == records[i].terminal_step());
      CHECK(back[i].steps[0].display == records[i].steps[0].display);
      CHECK(back[i].steps[0].alignment == records[i].steps[0].alignment);
      CHECK(back[i].steps.back().target_rank == 1);
      CHECK((back[i].steps[0].state_embeddings[1] - records[i].steps[0].state_embeddings[1]).norm() < 1e-6);
    }
  }
  SUBCASE("datasets carry one sequence per record") {
    const auto d = build_dataset(c, 1, records);
    REQUIRE(d.sequences.size() == records.size());
    const auto& r = records.front();
    const auto& seq = d.sequences.front();
    CHECK(seq.steps.size() == r.steps.size());
    for (std::size_t j = 0; j < 5; ++j) CHECK(seq.labels[0][j] == r.steps[0].alignment[j][1]);
    const auto& pair = r.steps[0].display.pairs[0];
    const auto plus = r.steps[0].labels[0] == 0 ? pair.a : pair.b;
    const auto minus = r.steps[0].labels[0] == 0 ? pair.b : pair.a;
    const Eigen::VectorXd diff =
        c.space(1).vectors.row(plus).cast<double>().transpose() - c.space(1).vectors.row(minus).cast<double>().transpose();
    CHECK((seq.steps[0][0].diff - diff).norm() < 1e-12);
  }
}

TEST_CASE("kept fraction on the calibration corpus matches the fixture") {
  std::ifstream in(kis::test::fixture("trajectory_kept_fraction.json"));
  const auto fixture = nlohmann::json::parse(in);
  const auto c = synth_corpus({fixture["n_items"].get<Eigen::Index>(), fixture["num_spaces"].get<int>(),
                               fixture["dim"].get<int>(), fixture["correlation"].get<double>(),
                               fixture["corpus_seed"].get<std::uint64_t>()});
  TrajectoryOptions o;
  o.num_sessions = fixture["sessions"].get<int>();
  o.seed = fixture["seed"].get<std::uint64_t>();
  TrajectoryStats stats;
  generate_trajectories(c, o, &stats);
  MESSAGE("kept fraction " << stats.kept_fraction());
  CHECK(std::abs(stats.kept_fraction() - fixture["kept_fraction"].get<double>()) <= 0.1);
}

TEST_CASE("toy two-space predictors rank the aligned space above the misaligned one") {
  // With two spaces a split vote follows space 0, so every disagreement has
  // space 0 aligned and space 1 misaligned.
  const auto c = synth_corpus({6000, 2, 16, 0.7, 21});
  TrajectoryOptions o;
  o.num_sessions = 400;
  o.seed = 5;
  const auto records = generate_trajectories(c, o);
  REQUIRE(records.size() > 40);
  const auto split = records.size() * 4 / 5;
  const std::vector<TrajectoryRecord> train_set(records.begin(), records.begin() + static_cast<std::ptrdiff_t>(split));
  const std::vector<TrajectoryRecord> held_out(records.begin() + static_cast<std::ptrdiff_t>(split), records.end());

  perception::PredictorConfig cfg{16, 32, 2, 4, 64, 0.1, 7, 5, true, true};
  perception::TrainOptions opts;
  opts.epochs = 10;
  const auto trained = train_predictors(c, train_set, cfg, opts, 3);

  const auto d0 = build_dataset(c, 0, held_out);
  const auto d1 = build_dataset(c, 1, held_out);
  int disagreements = 0, ordered = 0;
  for (std::size_t s = 0; s < held_out.size(); ++s) {
    for (std::size_t t = 0; t < held_out[s].steps.size(); ++t) {
      const std::span<const perception::StepTokens> p0(d0.sequences[s].steps.data(), t + 1);
      const std::span<const perception::StepTokens> p1(d1.sequences[s].steps.data(), t + 1);
      const auto c0 = perception::predict(trained.predictors[0], d0.sequences[s].query, p0);
      const auto c1 = perception::predict(trained.predictors[1], d1.sequences[s].query, p1);
      for (std::size_t j = 0; j < c0.size(); ++j) {
        const auto& align = held_out[s].steps[t].alignment[j];
        if (align[0] == align[1]) continue;
        ++disagreements;
        const double aligned = align[0] ? c0[j] : c1[j];
        const double misaligned = align[0] ? c1[j] : c0[j];
        ordered += aligned > misaligned ? 1 : 0;
      }
    }
  }
  REQUIRE(disagreements > 20);
  MESSAGE("aligned above misaligned on " << ordered << " of " << disagreements);
  CHECK(ordered >= 0.8 * disagreements);
}
