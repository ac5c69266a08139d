#include <gtest/gtest.h>

#include "dpm/cohort_store.hpp"
#include "temp_dir.hpp"

namespace dpm {
namespace {

TEST(CohortStore, SaveGetListRemove) {
  fixtures::TempDir dir;
  CohortStore store(dir.path());
  auto a = store.save("fast", "S0 -> S1", {"s1", "s2"}, "m-1");
  auto b = store.save("slow", "S0 ~> S1", {}, "m-1");
  EXPECT_NE(a.cohort_id, b.cohort_id);
  EXPECT_EQ(store.get(a.cohort_id), a);
  EXPECT_EQ(store.list().size(), 2u);
  EXPECT_TRUE(store.remove(a.cohort_id));
  EXPECT_FALSE(store.remove(a.cohort_id));
  EXPECT_EQ(store.get(a.cohort_id), std::nullopt);
  EXPECT_EQ(store.list(), std::vector<Cohort>{b});
}

TEST(CohortStore, SurvivesReload) {
  fixtures::TempDir dir;
  Cohort saved;
  {
    CohortStore store(dir.path());
    saved = store.save("x", "S2{final}", {"a", "b,c"}, "m-abc");
  }
  CohortStore reloaded(dir.path());
  EXPECT_EQ(reloaded.get(saved.cohort_id), saved);
}

TEST(CohortJson, RoundTrip) {
  Cohort c{"c-1", "n", "S1", {"z", "y"}, "m-2"};
  EXPECT_EQ(cohort_from_json(nlohmann::json::parse(to_json(c).dump())), c);
  EXPECT_THROW(cohort_from_json(nlohmann::json::parse(R"({"name": 3})")), Error);
}

}  // namespace
}  // namespace dpm
