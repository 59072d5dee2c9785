#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "dro/data.hpp"
#include "dro/error.hpp"

using namespace dro;
namespace fs = std::filesystem;

#ifndef DRO_TEST_DATA_DIR
#error "DRO_TEST_DATA_DIR must point at tests/data"
#endif

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const fs::path kData = DRO_TEST_DATA_DIR;

std::string manifest(const std::string& body) {
  return R"(<manifest xmlns:android="http://schemas.android.com/apk/res/android"><application>)" + body +
         "</application></manifest>";
}

} // namespace

TEST_CASE("single declared action") {
  const auto m = data::parse_manifest(manifest(
      R"(<activity android:name=".A"><intent-filter><action android:name="android.intent.action.VIEW"/></intent-filter></activity>)"));
  CHECK(m.actions == std::set<std::string>{"android.intent.action.VIEW"});
  CHECK(m.categories.empty());
  CHECK(m.all() == std::set<std::string>{"android.intent.action.VIEW"});
}

TEST_CASE("manifest without filters and duplicated actions") {
  CHECK(data::parse_manifest(manifest(R"(<activity android:name=".A"/>)")).all().empty());
  const auto m = data::parse_manifest(manifest(
      R"(<activity android:name=".A"><intent-filter><action android:name="X"/></intent-filter></activity>)"
      R"(<receiver android:name=".B"><intent-filter><action android:name="X"/></intent-filter></receiver>)"));
  CHECK(m.actions.size() == 1);
}

TEST_CASE("malformed xml reports its position") {
  try {
    (void)data::parse_manifest("<manifest>\n  <application>\n</manifest>");
    FAIL("expected a DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("intent class selection") {
  const auto m = data::parse_manifest(manifest(
      R"(<service android:name=".S"><intent-filter><action android:name="A"/><category android:name="C"/></intent-filter></service>)"));
  CHECK(data::select(m, data::IntentClasses::actions) == std::set<std::string>{"A"});
  CHECK(data::select(m, data::IntentClasses::categories) == std::set<std::string>{"C"});
  CHECK(data::select(m, data::IntentClasses::both) == std::set<std::string>{"A", "C"});
  CHECK(data::intent_classes_from_string("actions") == data::IntentClasses::actions);
  CHECK_THROWS_AS(data::intent_classes_from_string("permissions"), ConfigError);
}

TEST_CASE("checked-in manifest corpus yields the expected intent sets") {
  const auto expected = nlohmann::json::parse(slurp(kData / "manifests_expected.json"));
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(kData / "manifests")) {
    const std::string name = entry.path().filename().string();
    CAPTURE(name);
    REQUIRE(expected.contains(name));
    const auto& want = expected.at(name);
    const std::string text = slurp(entry.path());
    if (want.value("error", false)) {
      CHECK_THROWS_AS(data::parse_manifest(text), DataError);
    } else {
      const auto got = data::parse_manifest(text);
      CHECK(got.actions == want.at("actions").get<std::set<std::string>>());
      CHECK(got.categories == want.at("categories").get<std::set<std::string>>());
    }
    ++files;
  }
  CHECK(files == expected.size());
  CHECK(files >= 10);
}

TEST_CASE("vectorize is stable under manifest re-serialization") {
  const std::string compact = manifest(
      R"(<activity android:name=".A"><intent-filter><action android:name="B"/><category android:name="A"/></intent-filter></activity>)");
  const std::string spaced =
      "<?xml version=\"1.0\"?>\n<manifest xmlns:x=\"http://schemas.android.com/apk/res/android\">\n"
      "  <application>\n    <activity x:name=\".A\">\n      <intent-filter>\n"
      "        <category x:name=\"A\" />\n        <action x:name=\"B\" />\n"
      "      </intent-filter>\n    </activity>\n  </application>\n</manifest>\n";
  const data::IntentVocabulary vocab({"A", "B", "C"});
  const auto a = data::vectorize(data::parse_manifest(compact).all(), vocab);
  const auto b = data::vectorize(data::parse_manifest(spaced).all(), vocab);
  CHECK(a.features == b.features);
  CHECK(a.features == std::vector<double>{1, 1, 0});
}

TEST_CASE("vocabulary building") {
  auto v = data::build_vocabulary({{"A", "B"}, {"B", "C"}});
  CHECK(v.entries() == std::vector<std::string>{"A", "B", "C"});
  CHECK(data::build_vocabulary({{"A", "B"}, {"B", "C"}, {"A"}, {}, {"C", "B"}}) == v);
  CHECK(v.index_of("B") == 1u);
  CHECK_FALSE(v.index_of("Z"));
}

TEST_CASE("vocabulary fingerprint tracks its entries") {
  const data::IntentVocabulary a({"A", "B"}), b({"B", "A"}), c({"A", "B", "C"});
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.fingerprint() != c.fingerprint());
  CHECK(a.fingerprint().size() == 16);
  const fs::path p = fs::temp_directory_path() / "dro_test_vocab.txt";
  data::save_vocabulary(p, c);
  const auto back = data::load_vocabulary(p);
  CHECK(back == c);
  CHECK(slurp(p).rfind("# dro-vocabulary", 0) == 0);
  std::ofstream(p, std::ios::app) << "0_unsorted\n";
  CHECK_THROWS_AS(data::load_vocabulary(p), DataError);
  fs::remove(p);
}

TEST_CASE("vectorize examples") {
  const data::IntentVocabulary vocab({"A", "B", "C"});
  CHECK(data::vectorize({"B"}, vocab).features == std::vector<double>{0, 1, 0});
  CHECK(data::vectorize({}, vocab).features == std::vector<double>{0, 0, 0});
  const auto z = data::vectorize({"Z"}, vocab);
  CHECK(z.features == std::vector<double>{0, 0, 0});
  CHECK(z.oov_count == 1);
}

TEST_CASE("dataset csv round trip and validation") {
  data::Dataset ds;
  ds.ids = {"a", "b", "c"};
  ds.columns = {"android.intent.action.MAIN", "x,y"};
  ds.features = Matrix{{1, 0}, {0, 1}, {1, 1}};
  ds.labels = std::vector<int>{0, 1, 1};
  const fs::path p = fs::temp_directory_path() / "dro_test_ds.csv";
  data::save_dataset(p, ds);
  const auto back = data::load_dataset(p, ds.fingerprint());
  CHECK(back == ds);
  CHECK_THROWS_AS(data::load_dataset(p, std::string("0123456789abcdef")), DataError);

  auto unlabelled = data::from_csv("id,f1,f2\ns1,0,1\ns2,1,0\n");
  CHECK_FALSE(unlabelled.has_labels());
  CHECK(unlabelled.size() == 2);
  CHECK_THROWS_AS((void)unlabelled.require_labels(), DataError);

  try {
    (void)data::from_csv("id,f1,f2,label\ns1,0,2,1\n");
    FAIL("expected a DataError");
  } catch (const DataError& e) {
    const std::string what = e.what();
    CHECK(what.find("row 1") != std::string::npos);
    CHECK(what.find("f2") != std::string::npos);
  }
  CHECK_THROWS_AS(data::from_csv("name,f1\ns,1\n"), DataError);
  CHECK_THROWS_AS(data::from_csv("id,f1,f1\ns,1,0\n"), DataError);
  CHECK_THROWS_AS(data::from_csv("id,f1\ns,1,0\n"), DataError);
  fs::remove(p);
}

TEST_CASE("synthetic generator is deterministic and balanced") {
  data::SyntheticSpec s;
  const auto a = data::generate_synthetic(s);
  const auto b = data::generate_synthetic(s);
  CHECK(a.dataset == b.dataset);
  CHECK(a.ambiguous == b.ambiguous);
  CHECK(a.dataset.size() == 4000);
  CHECK(a.dataset.dims() == 40);
  CHECK_NOTHROW(a.dataset.validate());

  double pos = 0.0, amb = 0.0;
  for (std::size_t i = 0; i < 4000; ++i) {
    pos += (*a.dataset.labels)[i];
    amb += a.ambiguous[i];
  }
  CHECK(std::abs(pos / 4000.0 - 0.5) <= 0.03);
  CHECK(std::abs(amb / 4000.0 - 0.5) <= 0.02);

  s.seed = 8;
  CHECK_FALSE(data::generate_synthetic(s).dataset == a.dataset);
}

TEST_CASE("synthetic labels follow the planted rule on the unambiguous half") {
  const auto syn = data::generate_synthetic({});
  std::size_t n = 0, agree = 0;
  for (std::size_t i = 0; i < syn.dataset.size(); ++i) {
    if (syn.ambiguous[i] != 0) continue;
    ++n;
    agree += syn.rule_label(syn.dataset.features.row(i)) == (*syn.dataset.labels)[i] ? 1 : 0;
  }
  CHECK(std::abs(static_cast<double>(agree) / static_cast<double>(n) - 0.95) <= 0.02);
}

TEST_CASE("synthetic extremes") {
  data::SyntheticSpec s;
  s.ambiguous_fraction = 0.0;
  s.flip_noise = 0.0;
  const auto clean = data::generate_synthetic(s);
  for (std::size_t i = 0; i < clean.dataset.size(); ++i)
    CHECK(clean.rule_label(clean.dataset.features.row(i)) == (*clean.dataset.labels)[i]);

  // With every row ambiguous the labels carry no information: even the best
  // lookup over exact feature rows cannot beat chance on fresh data.
  s.ambiguous_fraction = 1.0;
  const auto noise = data::generate_synthetic(s);
  double pos = 0.0;
  for (int y : *noise.dataset.labels) pos += y;
  CHECK(std::abs(pos / 4000.0 - 0.5) <= 0.03);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < 4000; ++i)
    agree += noise.rule_label(noise.dataset.features.row(i)) == (*noise.dataset.labels)[i] ? 1 : 0;
  CHECK(std::abs(static_cast<double>(agree) / 4000.0 - 0.5) <= 0.03);

  s.signal_features = 0;
  CHECK_THROWS_AS(data::generate_synthetic(s), ConfigError);
}
