#include <gtest/gtest.h>

#include <chrono>
#include <thread>

#include "dpm/service.hpp"
#include "fixtures.hpp"
#include "temp_dir.hpp"

namespace dpm {
namespace {

nlohmann::json config_json(const Dataset& d) {
  return {{"subject_col", d.subject_column},
          {"age_col", d.age_column},
          {"model_vars", d.model_variables},
          {"extra_vars", d.extra_variables},
          {"outcome_cols", d.outcome_names}};
}

std::string error_code(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return to_http_error(e).body.at("code").get<std::string>();
  }
  ADD_FAILURE() << "expected an error";
  return {};
}

struct Trained {
  std::string dataset_id;
  std::string model_id;
};

Trained upload_and_train(Service& svc, const Dataset& d, int K, std::uint64_t seed = 1) {
  auto up = svc.create_dataset(export_dataset(d), config_json(d));
  Trained t;
  t.dataset_id = up.at("dataset_id");
  auto m = svc.create_model(
      {{"dataset_id", t.dataset_id}, {"n_states", K}, {"seed", seed}, {"n_restarts", 2}});
  t.model_id = m.at("model_id");
  return t;
}

TEST(Service, MalformedCsvIsValidationErrorWithRow) {
  fixtures::TempDir dir;
  Service svc(dir.path());
  nlohmann::json cfg = {{"subject_col", "id"}, {"age_col", "age"}, {"model_vars", {"IAA"}}};
  try {
    svc.create_dataset("id,age,IAA\nA,1,1\nA,2\n", cfg);
    FAIL();
  } catch (const Error& e) {
    auto err = to_http_error(e);
    EXPECT_EQ(err.status, 400);
    EXPECT_EQ(err.body["code"], "ValidationError");
    EXPECT_EQ(err.body["detail"]["row"], 3);
    EXPECT_EQ(err.body["detail"]["kind"], "MalformedCsv");
  }
}

TEST(Service, SingleStateFeatureMatrixIsColumnMeans) {
  fixtures::TempDir dir;
  Service svc(dir.path());
  auto d = fixtures::synthetic_cohort(40, 6, 9);
  auto t = upload_and_train(svc, d, 1);
  auto fm = svc.feature_matrix(t.model_id, std::nullopt);
  for (const auto& name : {"IAA", "IA2A", "GADA", "HLA_DR3"}) {
    double ones = 0, seen = 0;
    for (const auto& [_, s] : d.subjects) {
      for (const auto& v : s.visits) {
        auto o = v.observations.at(name);
        if (o == Obs::Missing) continue;
        seen += 1;
        ones += o == Obs::One ? 1 : 0;
      }
    }
    EXPECT_NEAR(fm["rows"][name][0].get<double>(), ones / seen, 1e-9) << name;
  }
  EXPECT_EQ(fm["source"]["HLA_DR3"], "empirical");
  EXPECT_EQ(fm["source"]["IAA"], "model");
}

TEST(Service, CohortMembersMatchDirectEvaluation) {
  fixtures::TempDir dir;
  Service svc(dir.path());
  auto d = fixtures::synthetic_cohort(60, 8, 4);
  auto t = upload_and_train(svc, d, 3);
  const std::string q = "S0 ~> S2";
  auto c = svc.create_cohort({{"model_id", t.model_id}, {"name", "progressors"}, {"query", q}});
  auto model = svc.workspace().model(t.model_id);
  auto expected = evaluate(parse_query(q), decode(*model, d));
  EXPECT_EQ(c["member_ids"].get<std::set<std::string>>(), expected);
  EXPECT_EQ(svc.list_cohorts().size(), 1u);
  EXPECT_EQ(svc.delete_cohort(c["cohort_id"])["deleted"], c["cohort_id"]);
  EXPECT_EQ(error_code([&] { svc.delete_cohort(c["cohort_id"]); }), "NotFound");
}

TEST(Service, ErrorMapping) {
  fixtures::TempDir dir;
  Service svc(dir.path());
  auto d = fixtures::synthetic_cohort(20, 4, 2);
  auto t = upload_and_train(svc, d, 2);
  EXPECT_EQ(error_code([&] { svc.get_model("m-nope"); }), "NotFound");
  EXPECT_EQ(error_code([&] { svc.subject(t.model_id, "nobody"); }), "NotFound");
  EXPECT_EQ(error_code([&] { svc.waterfall(t.model_id, "c-missing"); }), "NotFound");
  EXPECT_EQ(error_code([&] {
              svc.create_cohort({{"model_id", t.model_id}, {"name", "x"}, {"query", "S0 ->"}});
            }),
            "QueryParseError");
  EXPECT_EQ(error_code([&] {
              svc.create_cohort({{"model_id", t.model_id}, {"name", "x"}, {"query", "S9"}});
            }),
            "ValidationError");
  EXPECT_EQ(error_code([&] {
              svc.create_model({{"dataset_id", t.dataset_id}, {"n_states", 0}, {"seed", 1}});
            }),
            "ValidationError");
  EXPECT_EQ(error_code([&] { svc.density(t.model_id, "nothing", std::nullopt); }),
            "ValidationError");
}

TEST(Service, SubjectView) {
  fixtures::TempDir dir;
  Service svc(dir.path());
  auto d = fixtures::synthetic_cohort(10, 5, 3);
  auto t = upload_and_train(svc, d, 2);
  const auto& [sid, s] = *d.subjects.begin();
  auto j = svc.subject(t.model_id, sid);
  ASSERT_EQ(j["visits"].size(), s.visits.size());
  for (const auto& v : j["visits"]) {
    double total = 0;
    for (double p : v["posterior"]) total += p;
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
  EXPECT_EQ(j["viterbi_path"].size(), s.visits.size());
}

TEST(Service, TrainingBusyWhileAnotherJobRuns) {
  fixtures::TempDir dir;
  Service svc(dir.path());
  auto big = fixtures::synthetic_cohort(3000, 30, 5);
  auto up = svc.create_dataset(export_dataset(big), config_json(big));
  std::thread worker([&] {
    svc.create_model({{"dataset_id", up["dataset_id"]},
                      {"n_states", 6},
                      {"seed", 3},
                      {"n_restarts", 3},
                      {"max_iter", 200}});
  });
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(10);
  while (!svc.training_in_progress() && std::chrono::steady_clock::now() < deadline) {
    std::this_thread::sleep_for(std::chrono::microseconds(50));
  }
  ASSERT_TRUE(svc.training_in_progress());
  try {
    svc.create_model({{"dataset_id", up["dataset_id"]}, {"n_states", 2}, {"seed", 1}});
    ADD_FAILURE() << "second job was accepted";
  } catch (const Error& e) {
    auto err = to_http_error(e);
    EXPECT_EQ(err.status, 503);
    EXPECT_EQ(err.body["code"], "TrainingBusy");
  }
  worker.join();
  EXPECT_FALSE(svc.training_in_progress());
}

std::vector<std::string> snapshot(Service& svc, const std::string& model,
                                  const std::string& cohort) {
  return {svc.get_model(model).dump(),
          svc.feature_matrix(model, std::nullopt).dump(),
          svc.waterfall(model, cohort).dump(),
          svc.transitions(model, std::nullopt).dump(),
          svc.transitions(model, cohort).dump(),
          svc.density(model, "seroconversion", cohort).dump(),
          svc.list_cohorts().dump(),
          svc.list_datasets().dump(),
          svc.list_models().dump()};
}

TEST(Service, StateSurvivesRestartAndRepeatsExactly) {
  fixtures::TempDir dir;
  auto d = fixtures::synthetic_cohort(50, 7, 12);
  std::vector<std::string> first;
  std::string model, cohort;
  {
    Service svc(dir.path());
    auto t = upload_and_train(svc, d, 3);
    model = t.model_id;
    cohort = svc.create_cohort({{"model_id", model}, {"name", "all"}, {"query", "S0"}})["cohort_id"];
    first = snapshot(svc, model, cohort);
    EXPECT_EQ(snapshot(svc, model, cohort), first);
  }
  Service reopened(dir.path());
  EXPECT_EQ(snapshot(reopened, model, cohort), first);
}

// Same flows over a real socket.
class HttpTest : public ::testing::Test {
 protected:
  void SetUp() override {
    svc_ = std::make_unique<Service>(dir_.path());
    install_routes(server_, *svc_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override {
    server_.stop();
    thread_.join();
  }
  httplib::Client client() {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(60);
    return c;
  }

  fixtures::TempDir dir_;
  std::unique_ptr<Service> svc_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

TEST_F(HttpTest, EndToEnd) {
  auto c = client();
  auto d = fixtures::synthetic_cohort(30, 6, 8);

  httplib::MultipartFormDataItems form = {
      {"csv", export_dataset(d), "data.csv", "text/csv"},
      {"config", config_json(d).dump(), "config.json", "application/json"}};
  auto up = c.Post("/api/datasets", form);
  ASSERT_TRUE(up);
  ASSERT_EQ(up->status, 201) << up->body;
  auto dataset_id = nlohmann::json::parse(up->body)["dataset_id"].get<std::string>();

  nlohmann::json train = {{"dataset_id", dataset_id}, {"n_states", 2}, {"seed", 4}};
  auto tr = c.Post("/api/models", train.dump(), "application/json");
  ASSERT_TRUE(tr);
  ASSERT_EQ(tr->status, 201) << tr->body;
  auto model_id = nlohmann::json::parse(tr->body)["model_id"].get<std::string>();

  for (const auto* suffix : {"", "/feature-matrix", "/waterfall", "/transitions",
                             "/density?outcome=seroconversion&grid_points=64"}) {
    const auto path = "/api/models/" + model_id + suffix;
    auto a = c.Get(path);
    auto b = c.Get(path);
    ASSERT_TRUE(a && b);
    EXPECT_EQ(a->status, 200) << path << " " << a->body;
    EXPECT_EQ(a->body, b->body) << path;
  }
  auto fm = c.Get("/api/models/" + model_id + "/feature-matrix?vars=HLA_DR3");
  ASSERT_TRUE(fm);
  EXPECT_EQ(nlohmann::json::parse(fm->body)["rows"].size(), 1u);

  const auto sid = d.subjects.begin()->first;
  auto subj = c.Get("/api/models/" + model_id + "/subjects/" + sid);
  ASSERT_TRUE(subj);
  EXPECT_EQ(subj->status, 200);

  nlohmann::json cohort = {{"model_id", model_id}, {"name", "a"}, {"query", "S0 ~> S1"}};
  auto cr = c.Post("/api/cohorts", cohort.dump(), "application/json");
  ASSERT_TRUE(cr);
  ASSERT_EQ(cr->status, 201) << cr->body;
  auto cohort_id = nlohmann::json::parse(cr->body)["cohort_id"].get<std::string>();
  auto wf = c.Get("/api/models/" + model_id + "/waterfall?cohort_id=" + cohort_id);
  ASSERT_TRUE(wf);
  EXPECT_EQ(wf->status, 200);
  auto list = c.Get("/api/cohorts");
  ASSERT_TRUE(list);
  EXPECT_EQ(nlohmann::json::parse(list->body).size(), 1u);
  auto del = c.Delete("/api/cohorts/" + cohort_id);
  ASSERT_TRUE(del);
  EXPECT_EQ(del->status, 200);
}

TEST_F(HttpTest, ErrorResponses) {
  auto c = client();
  auto missing = c.Get("/api/models/m-0000/feature-matrix");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  auto body = nlohmann::json::parse(missing->body);
  EXPECT_EQ(body["code"], "NotFound");
  EXPECT_TRUE(body.contains("message"));

  nlohmann::json bad_upload = {
      {"csv", "id,age,IAA\nA,1,1\nA,1,0\n"},
      {"config", {{"subject_col", "id"}, {"age_col", "age"}, {"model_vars", {"IAA"}}}}};
  auto up = c.Post("/api/datasets", bad_upload.dump(), "application/json");
  ASSERT_TRUE(up);
  EXPECT_EQ(up->status, 400);
  EXPECT_EQ(nlohmann::json::parse(up->body)["code"], "ValidationError");

  auto garbage = c.Post("/api/models", "{not json", "application/json");
  ASSERT_TRUE(garbage);
  EXPECT_EQ(garbage->status, 400);

  auto del = c.Delete("/api/cohorts/c-none");
  ASSERT_TRUE(del);
  EXPECT_EQ(del->status, 404);
}

TEST(ParseBind, HostAndPort) {
  EXPECT_EQ(parse_bind("127.0.0.1:8080"), (std::pair<std::string, int>{"127.0.0.1", 8080}));
  EXPECT_THROW(parse_bind("localhost"), Error);
  EXPECT_THROW(parse_bind("host:99999"), Error);
}

}  // namespace
}  // namespace dpm
