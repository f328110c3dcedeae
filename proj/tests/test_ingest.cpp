#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "nam/ingest.hpp"
#include "nam/manifest.hpp"

using namespace nam;

namespace {

struct TempDir {
  std::filesystem::path dir;
  TempDir() {
    dir = std::filesystem::temp_directory_path() /
          ("nam-ingest-" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(dir);
  }
  ~TempDir() { std::filesystem::remove_all(dir); }
  std::string file(const std::string& name) const { return (dir / name).string(); }
};

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path);
  out << body;
}

}  // namespace

TEST_CASE("parse_ratings with header, timestamps and bad lines") {
  TempDir tmp;
  write_file(tmp.file("r.csv"),
             "user,item,rating,ts\n"
             "u1,i1,4.0,100\n"
             "u1,i2,2.5\n"
             "broken line\n"
             "u2,i1,notanumber,5\n"
             "u2,i3,5.0,200\n");
  ParseStats stats;
  auto records = parse_ratings(tmp.file("r.csv"), ',', true, &stats);
  REQUIRE(records.size() == 3);
  CHECK(stats.parsed == 3);
  CHECK(stats.malformed == 2);
  REQUIRE(stats.messages.size() == 2);
  CHECK(stats.messages[0].find(":4:") != std::string::npos);
  CHECK(stats.messages[1].find(":5:") != std::string::npos);
  CHECK(records[0].user == "u1");
  CHECK(records[0].rating == doctest::Approx(4.0));
  REQUIRE(records[0].timestamp.has_value());
  CHECK(*records[0].timestamp == 100);
  CHECK_FALSE(records[1].timestamp.has_value());
  CHECK_THROWS_AS(parse_ratings(tmp.file("missing.csv"), ',', true), IoError);
}

TEST_CASE("tab-delimited ratings without header") {
  TempDir tmp;
  write_file(tmp.file("r.tsv"), "u1\ti1\t4.5\nu1\ti2\t3.0\n");
  auto records = parse_ratings(tmp.file("r.tsv"), '\t', false);
  REQUIRE(records.size() == 2);
  CHECK(records[1].item == "i2");
}

TEST_CASE("filter_positive keeps strictly above threshold") {
  std::vector<RatingsRecord> records{
      {"u1", "a", 3.5, {}},  // boundary: excluded
      {"u1", "b", 3.6, {}},
      {"u2", "c", 5.0, {}},
      {"u2", "d", 1.0, {}},
  };
  auto histories = filter_positive(records);
  REQUIRE(histories.size() == 2);
  CHECK(histories["u1"] == std::vector<std::string>{"b"});
  CHECK(histories["u2"] == std::vector<std::string>{"c"});
}

TEST_CASE("parse_sessions") {
  TempDir tmp;
  write_file(tmp.file("s.tsv"),
             "s1\ta,b,c\n"
             "no-tab-here\n"
             "s2\t\n"
             "s3\tx,y\n");
  ParseStats stats;
  auto sessions = parse_sessions(tmp.file("s.tsv"), &stats);
  REQUIRE(sessions.size() == 2);
  CHECK(stats.malformed == 2);
  CHECK(sessions[0].items == std::vector<std::string>{"a", "b", "c"});
  CHECK(sessions[1].session == "s3");
}

TEST_CASE("parse_metadata strict mode and missing fields") {
  TempDir tmp;
  write_file(tmp.file("m.tsv"),
             "item_id\tgenres\tyear\n"
             "i1\tAction|Comedy\t1995\n"
             "i2\t\t2001\n"
             "i3\tDrama\n");
  std::vector<AttributeColumn> schema{{"genres", ViewKind::multihot},
                                      {"year", ViewKind::scalar}};
  auto table = parse_metadata(tmp.file("m.tsv"), schema);
  CHECK(table.cells.size() == 3);
  CHECK(table.cells["i1"]["genres"] == "Action|Comedy");
  CHECK(table.cells["i2"]["genres"].empty());
  CHECK(table.cells["i3"].count("year") == 0);  // short row: field absent

  SUBCASE("unknown column rejected in strict mode") {
    write_file(tmp.file("u.tsv"), "item_id\tbudget\ni1\t10\n");
    CHECK_THROWS_AS(parse_metadata(tmp.file("u.tsv"), schema, true), ParseError);
    CHECK_NOTHROW(parse_metadata(tmp.file("u.tsv"), schema, false));
  }
  SUBCASE("bad header rejected") {
    write_file(tmp.file("h.tsv"), "id\tgenres\n");
    CHECK_THROWS_AS(parse_metadata(tmp.file("h.tsv"), schema), ParseError);
  }
  SUBCASE("overlong row rejected") {
    write_file(tmp.file("o.tsv"), "item_id\tgenres\ni1\tA\textra\n");
    CHECK_THROWS_AS(parse_metadata(tmp.file("o.tsv"), schema), ParseError);
  }
}

TEST_CASE("build_registry assembles views in order with correct presence") {
  MetadataTable metadata;
  metadata.columns = {{"genres", ViewKind::multihot},
                      {"lang", ViewKind::onehot},
                      {"year", ViewKind::scalar}};
  metadata.cells["i1"] = {{"genres", "A|B"}, {"lang", "en"}, {"year", "1990"}};
  metadata.cells["i2"] = {{"genres", "A|Rare"}, {"lang", "fr"}, {"year", "2000"}};
  metadata.cells["i3"] = {{"genres", "B"}, {"lang", ""}, {"year", "2010"}};
  metadata.cells["i4"] = {};

  Catalog catalog;
  catalog.build({"i1", "i2", "i3", "i4"});
  DirectViewTable cf;
  cf.view = {"cf", ViewKind::cf};
  cf.dim = 2;
  cf.put("i1", {1.0, 0.0});
  cf.put("i2", {0.0, 1.0});

  RegistryConfig config;
  config.min_label_freq = 2;
  auto build = build_registry(catalog, metadata, &cf, config);
  const auto& registry = build.registry;
  REQUIRE(registry.views.size() == 4);
  CHECK(registry.views[0].view.name == "cf");
  CHECK(registry.views[1].view.name == "genres");
  CHECK(registry.views[2].view.name == "lang");
  CHECK(registry.views[3].view.name == "year");

  // "Rare" occurs once and is pruned from the genre vocabulary
  CHECK(build.vocabularies["genres"] == std::vector<std::string>{"A", "B"});
  CHECK(registry.views[1].dim == 2);
  CHECK(*registry.views[1].get("i2") == Vec{1.0, 0.0});  // Rare dropped
  CHECK(registry.views[1].present("i2"));
  CHECK_FALSE(registry.views[1].present("i4"));

  // empty one-hot cell means the view is absent for that item
  CHECK(registry.views[2].present("i1"));
  CHECK_FALSE(registry.views[2].present("i3"));
  CHECK(build.vocabularies["lang"] == std::vector<std::string>{"en", "fr"});

  // year normalized to zero mean / unit variance over present items
  const auto [mean, stddev] = build.year_stats["year"];
  CHECK(mean == doctest::Approx(2000.0));
  CHECK((*registry.views[3].get("i1"))[0] ==
        doctest::Approx((1990.0 - mean) / stddev));

  // presence flows through to the registry cache
  CHECK(registry.present(0, catalog.at("i1")));
  CHECK_FALSE(registry.present(0, catalog.at("i3")));

  SUBCASE("missing cf view is an error when required") {
    CHECK_THROWS_AS(build_registry(catalog, metadata, nullptr, config), DomainError);
  }
  SUBCASE("cf view can be disabled") {
    RegistryConfig no_cf = config;
    no_cf.use_cf = false;
    auto b2 = build_registry(catalog, metadata, nullptr, no_cf);
    CHECK(b2.registry.views.size() == 3);
    CHECK(b2.registry.views[0].view.name == "genres");
  }
}

TEST_CASE("build_registry attaches a dense text view") {
  TempDir tmp;
  write_file(tmp.file("text.tsv"), "i1\t0.5\t-1.0\ni2\t0.25\t0.75\n");
  MetadataTable metadata;
  metadata.columns = {{"genres", ViewKind::multihot}};
  metadata.cells["i1"] = {{"genres", "A"}};
  metadata.cells["i2"] = {{"genres", "A"}};
  Catalog catalog;
  catalog.build({"i1", "i2"});
  RegistryConfig config;
  config.min_label_freq = 1;
  config.use_cf = false;
  config.text_view_path = tmp.file("text.tsv");
  config.text_dim = 2;
  auto build = build_registry(catalog, metadata, nullptr, config);
  REQUIRE(build.registry.views.size() == 2);
  CHECK(build.registry.views[1].view.name == "text");
  CHECK(*build.registry.views[1].get("i1") == Vec{0.5, -1.0});

  config.text_dim = 0;
  CHECK_THROWS_AS(build_registry(catalog, metadata, nullptr, config), DomainError);
}

TEST_CASE("build_catalog keeps metadata-only items") {
  std::map<std::string, std::vector<std::string>> histories{
      {"u1", {"i2", "i1"}},
  };
  MetadataTable metadata;
  metadata.cells["i3"] = {};
  auto catalog = build_catalog(histories, metadata);
  CHECK(catalog.size() == 3);
  CHECK_NOTHROW(catalog.at("i3"));
}

TEST_CASE("index_histories maps ids to catalog indices") {
  std::map<std::string, std::vector<std::string>> histories{
      {"u1", {"b", "a"}},
      {"u2", {"c", "a"}},
  };
  Catalog catalog;
  catalog.build({"a", "b", "c"});
  auto indexed = index_histories(histories, catalog);
  REQUIRE(indexed.size() == 2);
  CHECK(indexed[0] == std::vector<std::uint32_t>{catalog.at("b"), catalog.at("a")});
}

TEST_CASE("catalog and baskets round trip through files") {
  TempDir tmp;
  Catalog catalog;
  catalog.build({"10", "2", "x1"});
  save_catalog(catalog, tmp.file("catalog.txt"));
  auto loaded = load_catalog(tmp.file("catalog.txt"));
  CHECK(loaded.ids == catalog.ids);

  BasketDataset data;
  data.baskets = {{0, 1}, {1, 2, 0}};
  save_baskets(data, catalog, tmp.file("baskets.txt"));
  auto back = load_baskets(tmp.file("baskets.txt"), catalog);
  CHECK(back.baskets == data.baskets);
}

TEST_CASE("manifest parsing") {
  TempDir tmp;
  write_file(tmp.file("run.ini"),
             "# comment\n"
             "[data]\n"
             "ratings = ml/ratings.csv\n"
             "  delimiter=,  \n"
             "\n"
             "[train]\n"
             "epochs = 5\n"
             "lr = 0.01\n"
             "stop_gradient_psi = false\n");
  auto m = Manifest::load(tmp.file("run.ini"));
  CHECK(m.require("data.ratings") == "ml/ratings.csv");
  CHECK(m.get("data.delimiter") == ",");
  CHECK(m.get_int("train.epochs", 0) == 5);
  CHECK(m.get_real("train.lr", 0.0) == doctest::Approx(0.01));
  CHECK(m.get_bool("train.stop_gradient_psi", true) == false);
  CHECK(m.get("data.missing", "fallback") == "fallback");
  CHECK_THROWS_AS(m.require("data.missing"), DomainError);
  CHECK_THROWS_AS(m.get_int("data.ratings", 0), DomainError);
  CHECK_THROWS_AS(m.get_bool("data.ratings", true), DomainError);

  auto cfg = train_config_from(m);
  CHECK(cfg.epochs == 5);
  CHECK(cfg.lr == doctest::Approx(0.01));
  CHECK_FALSE(cfg.stop_gradient_psi);
  CHECK(cfg.batch_size == 32);  // untouched default

  write_file(tmp.file("bad.ini"), "[x]\nno equals sign\n");
  CHECK_THROWS_AS(Manifest::load(tmp.file("bad.ini")), ParseError);
}

TEST_CASE("view schema and k-list parsing") {
  auto schema = parse_view_schema("genres:multihot,year:scalar");
  REQUIRE(schema.size() == 2);
  CHECK(schema[0].name == "genres");
  CHECK(schema[0].kind == ViewKind::multihot);
  CHECK(schema[1].kind == ViewKind::scalar);
  CHECK_THROWS_AS(parse_view_schema("nokind"), DomainError);

  CHECK(parse_k_list("1,5,10") == std::vector<std::size_t>{1, 5, 10});
  CHECK(parse_k_list("3..6") == std::vector<std::size_t>{3, 4, 5, 6});
  CHECK_THROWS_AS(parse_k_list(""), DomainError);
}
