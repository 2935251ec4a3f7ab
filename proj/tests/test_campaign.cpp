#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "densal/campaign.hpp"
#include "densal/error.hpp"

using namespace densal;
namespace fs = std::filesystem;

namespace {

HsiDataset scene(std::size_t extent, double sigma, std::uint64_t seed) {
    SynthParams p;
    p.height = p.width = extent;
    p.noise_sigma = sigma;
    p.seed = seed;
    return normalize(synth_generate(p));
}

CampaignConfig small_config(std::uint64_t seed) {
    CampaignConfig c;
    c.seed = seed;
    c.epochs = 3;
    c.initial_labeled = 8;
    c.query_size = 4;
    c.rounds = 2;
    return c;
}

// O(n^2) ranking: position = number of samples that beat this one.
std::vector<std::size_t> brute_force_top_k(const std::vector<std::size_t>& ids, const std::vector<double>& scores,
                                           std::size_t k) {
    std::vector<std::size_t> slot(k);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::size_t beaten_by = 0;
        for (std::size_t j = 0; j < ids.size(); ++j)
            if (scores[j] > scores[i] || (scores[j] == scores[i] && ids[j] < ids[i])) ++beaten_by;
        if (beaten_by < k) slot[beaten_by] = ids[i];
    }
    return slot;
}

// Scores computed one sample at a time with a double-precision softmax.
std::vector<double> independent_scores(Model<float>& model, const HsiDataset& d, const std::vector<std::size_t>& pool,
                                       Strategy strategy) {
    std::vector<double> out;
    for (auto p : pool) {
        const std::size_t one[] = {p};
        const auto x = gather_patches<float>(d, one, model.spec().patch_size);
        if (strategy == Strategy::PredictedLoss) {
            out.push_back(model.predict_loss(x).at(0));
            continue;
        }
        const auto s = model.classify(x);
        double top = -INFINITY;
        for (float v : s.values()) top = std::max(top, static_cast<double>(v));
        double z = 0;
        for (float v : s.values()) z += std::exp(v - top);
        double h = 0;
        for (float v : s.values()) {
            const double q = std::exp(v - top) / z;
            if (q > 0) h -= q * std::log(q);
        }
        out.push_back(h);
    }
    return out;
}

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        for (std::size_t t = i; t <= j; ++t) r[order[t]] = (static_cast<double>(i + j) / 2.0) + 1;
        i = j + 1;
    }
    return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n, mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RunOptions options_for(const fs::path& out, const fs::path& state = {}) {
    RunOptions o;
    o.out_dir = out;
    o.state_path = state;
    return o;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// Stops the campaign when asked for labels in the given round.
class StoppingOracle final : public LabelOracle {
  public:
    explicit StoppingOracle(std::size_t round) : round_(round) {}
    std::optional<std::vector<LabelAssignment>> request(const Campaign& c, std::stop_token) override {
        if (c.round() == round_) return std::nullopt;
        return c.simulated_labels();
    }

  private:
    std::size_t round_;
};

}  // namespace

TEST_CASE("rank_top_k ordering") {
    const std::vector<std::size_t> ids{10, 11, 12};
    const std::vector<double> scores{0.1, 0.9, 0.5};
    const auto top = rank_top_k(ids, scores, 2);
    REQUIRE(top.size() == 2);
    CHECK(top[0].pixel == 11);
    CHECK(top[1].pixel == 12);
    CHECK(rank_top_k(ids, scores, 0).empty());
    const std::vector<double> tied{1, 1, 1};
    const auto t = rank_top_k(ids, tied, 3);
    CHECK(t[0].pixel == 10);
    CHECK(t[2].pixel == 12);
}

TEST_CASE("entropy") {
    const std::vector<double> uniform(4, 0.25), certain{1, 0, 0};
    CHECK(entropy(uniform) == doctest::Approx(std::log(4.0)));
    CHECK(entropy(certain) == 0);
}

TEST_CASE("acquisition equals a brute-force re-ranking") {
    const auto d = scene(12, 0.05, 1);
    std::size_t checked = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto config = small_config(seed);
        config.epochs = 1;
        Campaign c(d, config);
        REQUIRE(c.pool().size() <= 200);
        if (seed % 2 == 1) c.train_round();
        for (auto strategy : {Strategy::PredictedLoss, Strategy::MaxEntropy}) {
            const std::size_t k = 1 + seed % 10;
            const auto got = c.acquire(strategy, k);
            const auto expected =
                brute_force_top_k(c.pool(), independent_scores(c.model(), d, c.pool(), strategy), k);
            std::vector<std::size_t> picked;
            for (const auto& q : got) picked.push_back(q.pixel);
            INFO("seed " << seed << " strategy " << strategy_name(strategy));
            CHECK(picked == expected);
            ++checked;
        }
    }
    CHECK(checked == 100);
}

TEST_CASE("random acquisition draws distinct pool samples") {
    const auto d = scene(12, 0.05, 1);
    auto config = small_config(3);
    config.strategy = Strategy::Random;
    Campaign c(d, config);
    const auto a = c.acquire(10);
    std::set<std::size_t> distinct;
    for (const auto& q : a) {
        distinct.insert(q.pixel);
        CHECK(std::binary_search(c.pool().begin(), c.pool().end(), q.pixel));
    }
    CHECK(distinct.size() == 10);
    CHECK_THROWS(c.acquire(c.pool().size() + 1));
}

TEST_CASE("initialization rules") {
    const auto d = scene(12, 0.05, 1);
    SUBCASE("same seed gives the same labeled set") {
        Campaign a(d, small_config(4)), b(d, small_config(4));
        CHECK(a.labeled() == b.labeled());
        CHECK(a.labeled().size() == 8);
        CHECK(a.labeled_classes().size() == 8);
        for (std::size_t i = 0; i < 8; ++i) CHECK(a.labeled_classes()[i] == d.class_of(a.labeled()[i]));
    }
    SUBCASE("cold start only with random acquisition") {
        auto config = small_config(0);
        config.initial_labeled = 0;
        CHECK_THROWS_AS(Campaign(d, config), ConfigError);
        config.strategy = Strategy::Random;
        Campaign c(d, config);
        CHECK(c.labeled().empty());
        CHECK(c.train_round().epoch_loss.empty());
    }
    SUBCASE("budget larger than the available pool") {
        auto config = small_config(0);
        config.rounds = 100;
        CHECK_THROWS(Campaign(d, config));
    }
    SUBCASE("labeled set smaller than the batch") {
        auto config = small_config(0);
        config.initial_labeled = 2;
        CHECK_THROWS_AS(Campaign(d, config), ConfigError);
    }
}

TEST_CASE("training") {
    const auto d = scene(12, 0.05, 1);
    SUBCASE("zero epochs leave the model untouched") {
        Campaign c(d, small_config(1));
        std::stringstream before, after;
        save_checkpoint(c.model(), before);
        CHECK(c.train_round(0).epoch_loss.empty());
        save_checkpoint(c.model(), after);
        CHECK(before.str() == after.str());
    }
    SUBCASE("fixed seeds give identical parameters") {
        Campaign a(d, small_config(2)), b(d, small_config(2));
        const auto ta = a.train_round(), tb = b.train_round();
        CHECK(ta.epoch_loss == tb.epoch_loss);
        std::stringstream sa, sb;
        save_checkpoint(a.model(), sa);
        save_checkpoint(b.model(), sb);
        CHECK(sa.str() == sb.str());
    }
    SUBCASE("a requested stop ends training early") {
        Campaign c(d, small_config(2));
        std::stop_source source;
        source.request_stop();
        CHECK(c.train_round(source.get_token()).stopped);
    }
}

TEST_CASE("label application") {
    const auto d = scene(12, 0.05, 1);
    Campaign c(d, small_config(5));
    c.train_round();
    c.open_query();
    const auto labeled_before = c.labeled().size();
    const auto pool_before = c.pool().size();
    auto labels = c.simulated_labels();
    for (const auto& l : labels) CHECK(l.label == d.class_of(l.pixel));

    auto duplicate = labels;
    duplicate[1] = duplicate[0];
    CHECK_THROWS_AS(c.apply_labels(duplicate), std::invalid_argument);
    auto partial = labels;
    partial.pop_back();
    CHECK_THROWS_AS(c.apply_labels(partial), std::invalid_argument);
    auto out_of_range = labels;
    out_of_range[0].label = 4;
    CHECK_THROWS_AS(c.apply_labels(out_of_range), std::invalid_argument);
    auto foreign = labels;
    foreign[0].pixel = c.test().front();
    CHECK_THROWS_AS(c.apply_labels(foreign), std::invalid_argument);
    CHECK(c.labeled().size() == labeled_before);
    CHECK(c.pool().size() == pool_before);
    CHECK(c.pending().size() == 4);
    CHECK(c.round() == 0);

    std::reverse(labels.begin(), labels.end());
    c.apply_labels(labels);
    CHECK(c.labeled().size() == labeled_before + 4);
    CHECK(c.pool().size() == pool_before - 4);
    CHECK(c.pending().empty());
    CHECK(c.round() == 1);
    CHECK_NOTHROW(c.check_invariants());
}

TEST_CASE("budget bookkeeping through run_campaign") {
    const auto d = scene(32, 0.05, 0);
    auto config = CampaignConfig{};
    config.epochs = 3;
    config.seed = 7;
    SimulatedOracle oracle;
    TempDir a("densal_budget_a"), b("densal_budget_b");
    const auto ra = run_campaign(d, config, oracle, options_for(a.path));
    CHECK(ra.labeled == 48);
    CHECK(ra.history.size() == 9);
    const auto csv = read_file(a.path / "metrics.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 10);
    CHECK(csv.rfind("round,labeled_count,OA,AA,kappa,acc_1,acc_2,acc_3,acc_4\n", 0) == 0);
    CHECK(csv.find("\n8,48,") != std::string::npos);
    run_campaign(d, config, oracle, options_for(b.path));
    CHECK(read_file(b.path / "metrics.csv") == csv);
    CHECK(read_file(b.path / "map.u16") == read_file(a.path / "map.u16"));
    CHECK(read_file(a.path / "map.u16").size() == 2 * 32 * 32);
}

TEST_CASE("zero rounds evaluate once") {
    const auto d = scene(12, 0.05, 1);
    auto config = small_config(1);
    config.rounds = 0;
    SimulatedOracle oracle;
    const auto r = run_campaign(d, config, oracle);
    CHECK(r.history.size() == 1);
    CHECK(r.labeled == 8);
}

TEST_CASE("interrupted campaigns resume to the same result") {
    const auto d = scene(12, 0.05, 2);
    auto config = small_config(9);
    config.rounds = 3;
    TempDir full("densal_resume_full"), part("densal_resume_part");
    SimulatedOracle simulated;
    run_campaign(d, config, simulated, options_for(full.path));

    const auto state = part.path / "campaign.state";
    StoppingOracle stopper(2);
    const auto first = run_campaign(d, config, stopper, options_for(part.path, state));
    CHECK(first.stopped);
    CHECK(first.history.size() == 3);
    CHECK(fs::exists(state));
    CHECK_FALSE(fs::exists(part.path / "metrics.csv"));

    auto other = config;
    other.seed = 10;
    CHECK_THROWS(run_campaign(d, other, simulated, options_for({}, state)));

    const auto second = run_campaign(d, config, simulated, options_for(part.path, state));
    CHECK_FALSE(second.stopped);
    CHECK(read_file(part.path / "metrics.csv") == read_file(full.path / "metrics.csv"));
    CHECK(read_file(part.path / "map.u16") == read_file(full.path / "map.u16"));
}

TEST_CASE("state round-trip") {
    const auto d = scene(12, 0.05, 1);
    Campaign c(d, small_config(6));
    c.train_round();
    c.evaluate_round();
    c.open_query();
    std::stringstream s;
    c.save_state(s);
    auto back = Campaign::restore(d, small_config(6), s);
    CHECK(back.round() == c.round());
    CHECK(back.labeled() == c.labeled());
    CHECK(back.labeled_classes() == c.labeled_classes());
    CHECK(back.pool() == c.pool());
    CHECK(back.test() == c.test());
    CHECK(back.pending().size() == c.pending().size());
    CHECK(back.history() == c.history());
    std::stringstream again;
    back.save_state(again);
    CHECK(again.str() == s.str());
    std::stringstream truncated(s.str().substr(0, 40));
    CHECK_THROWS(Campaign::restore(d, small_config(6), truncated));
}

TEST_CASE("rendered maps") {
    const auto d = scene(12, 0.05, 1);
    Campaign c(d, small_config(1));
    const auto map = c.render_map();
    CHECK(map.size() == d.pixels());
    for (auto v : map) CHECK((v >= 1 && v <= d.num_classes()));
    CHECK(c.render_map() == map);
    const auto png = map_png(d, map);
    CHECK(png.rfind("\x89PNG\r\n\x1a\n", 0) == 0);
    // PLTE chunk: black for index 0 followed by the dataset palette
    const auto plte = png.find("PLTE");
    REQUIRE(plte != std::string::npos);
    CHECK(png.substr(plte + 4, 3) == std::string(3, '\0'));
    for (std::size_t k = 0; k < d.num_classes(); ++k) {
        CHECK(static_cast<std::uint8_t>(png[plte + 7 + 3 * k]) == d.palette[k].r);
        CHECK(static_cast<std::uint8_t>(png[plte + 8 + 3 * k]) == d.palette[k].g);
        CHECK(static_cast<std::uint8_t>(png[plte + 9 + 3 * k]) == d.palette[k].b);
    }
}

TEST_CASE("metrics csv format") {
    const auto m = metrics_from_confusion({{45, 5}, {10, 40}});
    const auto csv = metrics_csv({m, m}, 16, 4);
    CHECK(csv == "round,labeled_count,OA,AA,kappa,acc_1,acc_2\n"
                 "0,16,0.84999999999999998,0.85000000000000009,0.69999999999999996,0.90000000000000002,0.80000000000000004\n"
                 "1,20,0.84999999999999998,0.85000000000000009,0.69999999999999996,0.90000000000000002,0.80000000000000004\n");
}

TEST_CASE("training loss decreases on separable data") {
    double first = 0, last = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto d = scene(32, 0.05, seed);
        auto config = CampaignConfig{};
        config.seed = seed;
        config.initial_labeled = 48;
        Campaign c(d, config);
        const auto trace = c.train_round();
        REQUIRE(trace.epoch_loss.size() == 30);
        first += (trace.epoch_loss[0] + trace.epoch_loss[1] + trace.epoch_loss[2]) / 3;
        last += (trace.epoch_loss[27] + trace.epoch_loss[28] + trace.epoch_loss[29]) / 3;
    }
    INFO("first-10% mean " << first / 5 << ", last-10% mean " << last / 5);
    CHECK(last < first);
}

TEST_CASE("predicted losses rank-correlate with held-out cross-entropy") {
    double total = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto d = scene(32, 0.05, seed);
        auto config = CampaignConfig{};
        config.seed = seed;
        config.initial_labeled = 48;
        Campaign c(d, config);
        c.train_round();
        const auto& test = c.test();
        const auto predicted = pool_scores(c.model(), d, test, Strategy::PredictedLoss, 64);
        std::vector<double> truth;
        for (auto p : test) {
            const std::size_t one[] = {p};
            const auto s = c.model().classify(gather_patches<float>(d, one, 16));
            double top = -INFINITY;
            for (float v : s.values()) top = std::max(top, static_cast<double>(v));
            double z = 0;
            for (float v : s.values()) z += std::exp(v - top);
            truth.push_back(std::log(z) + top - s.at(static_cast<std::size_t>(d.class_of(p))));
        }
        const double rho = spearman(predicted, truth);
        MESSAGE("seed " << seed << " spearman " << rho);
        total += rho;
    }
    CHECK(total / 5 > 0);
}

TEST_CASE("noise-free scenes are mapped almost perfectly") {
    const auto d = scene(32, 0.0, 0);
    // Misses concentrate on blob boundaries, so this needs near-full supervision.
    auto config = CampaignConfig{};
    config.initial_labeled = 800;
    config.rounds = 0;
    config.epochs = 100;
    config.objective.batch_size = 16;
    Campaign c(d, config);
    c.train_round();
    const auto map = c.render_map();
    std::size_t agree = 0;
    for (std::size_t p = 0; p < d.pixels(); ++p) agree += map[p] == d.labels[p];
    const double rate = static_cast<double>(agree) / static_cast<double>(d.pixels());
    INFO("agreement " << rate);
    CHECK(rate > 0.99);
}
