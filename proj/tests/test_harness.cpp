#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "calderon/harness.hpp"
#include "calderon/parallel.hpp"
#include "support.hpp"

using namespace calderon;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = CALDERON_SOURCE_DIR;

json base_doc(const std::string& space = "grid8.json") {
  return json{{"name", "t"},
              {"space", (kSource / "data" / space).string()},
              {"family", {{"constructor", "haar"}}},
              {"N", 1},
              {"j0", 1},
              {"decay", json::array()}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig bundled(const std::string& name, const fs::path& out) {
  ExperimentConfig c = load_config(kSource / "configs" / (name + ".json"));
  c.output_dir = out;
  return c;
}

}  // namespace

TEST_CASE("parse_config rejects invalid documents") {
  const fs::path dir = support::scratch("harness_bad");
  auto rejects = [&](json doc) { CHECK_THROWS_AS(parse_config(doc, dir), ConfigError); };
  json d = base_doc();
  d["bogus"] = 1;
  rejects(d);
  d = base_doc();
  d["space"] = (dir / "nope.json").string();
  rejects(d);
  d = base_doc();
  d["N"] = -1;
  rejects(d);
  d = base_doc();
  d["delta"] = 1.5;
  rejects(d);
  d = base_doc();
  d["mode"] = "sideways";
  rejects(d);
  d = base_doc();
  d["samplers"] = json::array({"nearest"});
  rejects(d);
  d = base_doc();
  d["decay"] = json::array({json{{"quantity", "RN_l2"}, {"sweep", json::array()}}});
  rejects(d);
  d = base_doc();
  d["family"] = json{{"constructor", "load"}, {"path", (dir / "missing").string()}};
  rejects(d);
  d = base_doc();
  d["stages"] = json::array({"space", "teleport"});
  rejects(d);
  CHECK_THROWS_AS(load_config(dir / "absent.json"), ConfigError);
  std::ofstream(dir / "trunc.json") << "{\"name\": ";
  CHECK_THROWS_AS(load_config(dir / "trunc.json"), ConfigError);
  // nothing was created on the way
  CHECK_FALSE(fs::exists(dir / "out"));
}

TEST_CASE("config echo is stable and omits the output directory") {
  json d = base_doc();
  d["output"] = "/tmp/somewhere";
  const auto a = parse_config(d, ".").to_json();
  d["output"] = "/tmp/elsewhere";
  const auto b = parse_config(d, ".").to_json();
  CHECK(a == b);
  CHECK(a.dump().find("somewhere") == std::string::npos);
}

TEST_CASE("haar-oracle config: exact identities pass, decay tables degenerate") {
  const fs::path out = support::scratch("harness_haar");
  const auto cfg = bundled("haar-oracle", out);
  const auto rep = run_experiment(cfg);
  CHECK(rep.exit_code() == kExitOk);
  CHECK(rep.gating_failures.empty());
  for (const auto& st : rep.stages) CHECK(st.status == "ran");
  REQUIRE(rep.decay.size() == 4);
  for (const auto& t : rep.decay) CHECK(t.degenerate);
  const json doc = rep.to_json(false);
  CHECK_FALSE(doc.contains("timings"));
  CHECK(rep.to_json(true).contains("timings"));

  const auto files = write_artifacts(rep, cfg);
  CHECK(fs::exists(out / "report.json"));
  CHECK(fs::exists(out / "summary.csv"));
  CHECK(fs::exists(out / "decay_RN_l2.csv"));
  const json manifest = json::parse(slurp(out / "manifest.json"));
  CHECK(manifest["report_hash"] == rep.hash());
  CHECK(manifest["exit_code"] == 0);
  for (const auto& f : manifest["files"]) {
    CHECK(sha256_hex(slurp(out / f["path"].get<std::string>())) == f["sha256"]);
  }
  // report.json round-trips to the same hash once timings are dropped
  json reread = json::parse(slurp(out / "report.json"));
  reread.erase("timings");
  CHECK(sha256_hex(reread.dump()) == rep.hash());
}

TEST_CASE("smoothed-32 config: reconstruction within tolerance, gating tables decrease") {
  const fs::path out = support::scratch("harness_smoothed");
  const auto cfg = bundled("smoothed-32", out);
  const auto rep = run_experiment(cfg);
  CHECK(rep.exit_code() == kExitOk);
  for (const auto& t : rep.decay) {
    CHECK(t.monotone);
    CHECK(t.ratio < 1.0);
  }
  const json doc = rep.to_json(false);
  bool saw_reconstruction = false;
  for (const auto& st : doc["stages"]) {
    if (st["name"] != "formulae") continue;
    for (auto& [key, r] : st["body"]["reports"].items())
      for (const auto& c : r["conditions"])
        if (c["name"].get<std::string>().find("reconstruction_l2") != std::string::npos) {
          saw_reconstruction = true;
          CHECK(c["pass"].get<bool>());
          CHECK(c["max_violation"].get<double>() <= 1e-6);
        }
    CHECK_FALSE(st["body"]["certificates"].empty());
    for (const auto& entry : st["body"]["certificates"]) {
      const auto& cert = entry["certificate"];
      CHECK(cert["residual"].get<double>() <= 2 * cert["tail_bound"].get<double>() + 1e-12);
      CHECK(entry["reconstruction"]["l2"].get<double>() <= 1e-6);
    }
  }
  CHECK(saw_reconstruction);

  write_artifacts(rep, cfg);
  // CSV values round-trip through strtod exactly
  std::ifstream csv(out / "decay_RN_l2.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "N,RN_l2,fit");
  std::size_t row = 0;
  while (std::getline(csv, line)) {
    const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
    const double v = std::strtod(line.substr(c1 + 1, c2 - c1 - 1).c_str(), nullptr);
    REQUIRE(row < rep.decay[0].values.size());
    CHECK(v == rep.decay[0].values[row]);
    ++row;
  }
  CHECK(row == rep.decay[0].values.size());
}

TEST_CASE("report hash is independent of reruns and thread count") {
  json d = base_doc("grid16.json");
  d["family"] = json{{"constructor", "smoothed"}};
  d["decay"] = json::array({json{{"quantity", "RN_l2"}, {"sweep", {0, 1, 2}}}});
  const auto cfg = parse_config(d, ".");
  set_thread_count(1);
  const std::string h1 = run_experiment(cfg).hash();
  CHECK(run_experiment(cfg).hash() == h1);
  set_thread_count(3);
  CHECK(run_experiment(cfg).hash() == h1);
  set_thread_count(1);
}

TEST_CASE("empty decay section writes no plot data and notes it") {
  const fs::path out = support::scratch("harness_nodecay");
  json d = base_doc();
  d["output"] = out.string();
  const auto cfg = parse_config(d, ".");
  const auto rep = run_experiment(cfg);
  write_artifacts(rep, cfg);
  for (const auto& e : fs::directory_iterator(out)) {
    const bool plot = e.path().extension() == ".csv" && e.path().filename() != "summary.csv";
    CHECK_FALSE(plot);
  }
  const json manifest = json::parse(slurp(out / "manifest.json"));
  CHECK(manifest["decay_tables"] == 0);
  CHECK(manifest.contains("notes"));
}

TEST_CASE("stage selection skips unrequested stages") {
  json d = base_doc();
  d["stages"] = json::array({"space", "dyadic"});
  const auto rep = run_experiment(parse_config(d, "."));
  CHECK(rep.exit_code() == kExitOk);
  for (const auto& st : rep.stages) {
    if (st.name == "space" || st.name == "dyadic") CHECK(st.status == "ran");
  }
}

TEST_CASE("format_g17 and sha256_hex") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  for (double v : {0.1, 1.0 / 3.0, 6.02214076e23, 4.9e-324, -2.5e-300}) {
    CHECK(std::strtod(format_g17(v).c_str(), nullptr) == v);
  }
}
