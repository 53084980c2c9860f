// Fit a baseline for one channel from simulated passages and score
// damaged passages against it, all in memory.

#include <iostream>

#include "girder/girder.hpp"

int main() {
  using namespace girder;
  const auto g = default_girder();
  ExperimentPlan plan;
  plan.speeds = {360.0};
  plan.channels = {"P3b"};
  plan.baseline_passages = 4;
  plan.damage_passages = 4;
  plan.damage_sections = {Section::Quarter};
  plan.damage_components = {ComponentKind::BottomPlate};

  std::vector<PassageRecord> baseline, damaged;
  for (const auto& c : enumerate_conditions(plan)) {
    auto recs = generate_condition(c, plan, g);
    auto& dst = c.condition == Condition::Baseline ? baseline : damaged;
    dst.insert(dst.end(), recs.begin(), recs.end());
  }

  BaselineConfig cfg;
  cfg.ar_order = 4;
  const auto model = fit_baseline(baseline, cfg, *g.registry().find("P3b"));
  std::cout << "baseline: " << model.fit_ids.size() << " fit / " << model.validation_ids.size()
            << " validation passages, p = " << model.pca.retained_p << ", cb = " << model.threshold.cb
            << "\n";

  const auto report = score(damaged, model);
  for (const auto& r : report.rows)
    std::cout << r.passage_id << "  DF " << r.df << (r.outlier ? "  outlier" : "") << "\n";
  std::cout << "flagged " << report.damaged_flagged << " of " << report.damaged_rows << "\n";
}
