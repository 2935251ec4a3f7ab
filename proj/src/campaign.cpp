#include "densal/campaign.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "densal/binary_io.hpp"
#include "densal/error.hpp"
#include "densal/image.hpp"

namespace densal {

namespace {

constexpr char kStateMagic[] = "DNSLSTA1";
constexpr std::uint32_t kStateVersion = 1;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void log_line(const RunOptions& options, const std::string& line) {
    if (options.log) options.log(line);
}

}  // namespace

std::string_view strategy_name(Strategy s) {
    switch (s) {
        case Strategy::PredictedLoss: return "predicted-loss";
        case Strategy::MaxEntropy: return "max-entropy";
        case Strategy::Random: return "random";
    }
    return "?";
}

Strategy parse_strategy(const std::string& name) {
    for (auto s : {Strategy::PredictedLoss, Strategy::MaxEntropy, Strategy::Random})
        if (name == strategy_name(s)) return s;
    throw ConfigError("strategy: unknown '" + name + "'; valid strategies are predicted-loss, max-entropy, random");
}

std::string_view oracle_name(OracleMode m) { return m == OracleMode::Simulated ? "simulated" : "human"; }

OracleMode parse_oracle(const std::string& name) {
    if (name == "simulated") return OracleMode::Simulated;
    if (name == "human") return OracleMode::Human;
    throw ConfigError("oracle: unknown '" + name + "'; expected simulated or human");
}

std::string_view phase_name(CampaignPhase p) {
    switch (p) {
        case CampaignPhase::Training: return "training";
        case CampaignPhase::AwaitingLabels: return "awaiting-labels";
        case CampaignPhase::Finished: return "finished";
        case CampaignPhase::Failed: return "failed";
    }
    return "?";
}

CampaignConfig CampaignConfig::paper_defaults() {
    CampaignConfig c;
    c.preset = "densenet121";
    c.backbone = BackboneSpec::densenet121(2, 1);
    c.objective.batch_size = 10;
    c.epochs = 200;
    c.initial_labeled = 160;
    c.query_size = 10;
    c.rounds = 32;
    return c;
}

void CampaignConfig::validate() const {
    objective.validate();
    backbone.validate();
    if (epochs < 1) throw ConfigError("epochs: must be >= 1");
    if (!(optimizer.learning_rate > 0) || !std::isfinite(optimizer.learning_rate))
        throw ConfigError("learning_rate: must be a positive finite number");
    if (!(optimizer.beta1 >= 0 && optimizer.beta1 < 1) || !(optimizer.beta2 >= 0 && optimizer.beta2 < 1))
        throw ConfigError("adam betas must lie in [0, 1)");
    if (!(optimizer.epsilon > 0)) throw ConfigError("adam epsilon must be positive");
    if (!(test_fraction > 0 && test_fraction < 1))
        throw ConfigError("test_fraction: must lie in (0, 1), got " + fmt_double(test_fraction));
    if (query_size < 1 && rounds > 0) throw ConfigError("query_size: must be >= 1 when rounds > 0");
    if (eval_batch < 1) throw ConfigError("eval_batch: must be >= 1");
    if (initial_labeled == 0 && strategy != Strategy::Random)
        throw ConfigError("initial_labeled: a cold start (0) is only supported with strategy = random");
    if (initial_labeled > 0 && initial_labeled < objective.batch_size)
        throw ConfigError("initial_labeled: " + std::to_string(initial_labeled) + " is smaller than batch_size " +
                          std::to_string(objective.batch_size) + "; lower batch_size");
}

std::string CampaignConfig::canonical() const {
    std::ostringstream s;
    const auto& b = backbone;
    s << "preset = " << preset << '\n'
      << "initial_channels = " << b.initial_channels << '\n'
      << "growth_rate = " << b.growth_rate << '\n'
      << "bottleneck_width = " << b.bottleneck_width << '\n'
      << "block_sizes = [" << b.block_sizes[0] << ',' << b.block_sizes[1] << ',' << b.block_sizes[2] << ','
      << b.block_sizes[3] << "]\n"
      << "theta = " << fmt_double(b.theta) << '\n'
      << "num_classes = " << b.num_classes << '\n'
      << "input_bands = " << b.input_bands << '\n'
      << "patch_size = " << b.patch_size << '\n'
      << "initial_maxpool = " << (b.initial_maxpool ? "true" : "false") << '\n'
      << "loss_hidden = " << b.loss_hidden << '\n'
      << "xi = " << fmt_double(objective.xi) << '\n'
      << "batch_size = " << objective.batch_size << '\n'
      << "learning_rate = " << fmt_double(optimizer.learning_rate) << '\n'
      << "beta1 = " << fmt_double(optimizer.beta1) << '\n'
      << "beta2 = " << fmt_double(optimizer.beta2) << '\n'
      << "epsilon = " << fmt_double(optimizer.epsilon) << '\n'
      << "epochs = " << epochs << '\n'
      << "initial_labeled = " << initial_labeled << '\n'
      << "query_size = " << query_size << '\n'
      << "rounds = " << rounds << '\n'
      << "test_fraction = " << fmt_double(test_fraction) << '\n'
      << "strategy = " << strategy_name(strategy) << '\n'
      << "oracle = " << oracle_name(oracle) << '\n'
      << "seed = " << seed << '\n'
      << "fine_tune = " << (fine_tune ? "true" : "false") << '\n'
      << "ranking_into_backbone = " << (ranking_into_backbone ? "true" : "false") << '\n'
      << "eval_batch = " << eval_batch << '\n';
    return s.str();
}

std::uint64_t CampaignConfig::hash() const {
    // The oracle mode does not change the trajectory of a campaign.
    CampaignConfig c = *this;
    c.oracle = OracleMode::Simulated;
    return fnv1a(c.canonical());
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose, std::uint64_t index) {
    return splitmix64(splitmix64(base ^ fnv1a(purpose)) + index);
}

std::vector<Query> rank_top_k(std::span<const std::size_t> ids, std::span<const double> scores, std::size_t k) {
    if (ids.size() != scores.size()) throw std::invalid_argument("rank_top_k: ids and scores differ in length");
    if (k > ids.size())
        throw std::invalid_argument("rank_top_k: k = " + std::to_string(k) + " exceeds the pool size " +
                                    std::to_string(ids.size()));
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), 0);
    auto before = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return ids[a] < ids[b];
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);
    std::vector<Query> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back({ids[order[i]], scores[order[i]]});
    return out;
}

double entropy(std::span<const double> probabilities) {
    double h = 0;
    for (double p : probabilities)
        if (p > 0) h -= p * std::log(p);
    return h;
}

template <typename T>
Tensor<T> gather_patches(const HsiDataset& dataset, std::span<const std::size_t> pixels, std::size_t m) {
    const std::size_t per = dataset.bands * m * m;
    std::vector<T> data(pixels.size() * per);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const std::size_t p = pixels[i];
        extract_patch_into<T>(dataset, p / dataset.width, p % dataset.width, m,
                              std::span<T>(data.data() + i * per, per));
    }
    return Tensor<T>::from({pixels.size(), dataset.bands, m, m}, std::move(data));
}

template Tensor<float> gather_patches<float>(const HsiDataset&, std::span<const std::size_t>, std::size_t);
template Tensor<double> gather_patches<double>(const HsiDataset&, std::span<const std::size_t>, std::size_t);

namespace {

template <typename Fn>
void for_each_batch(std::span<const std::size_t> pixels, std::size_t batch, Fn&& fn) {
    for (std::size_t start = 0; start < pixels.size(); start += batch) {
        const std::size_t n = std::min(batch, pixels.size() - start);
        fn(start, pixels.subspan(start, n));
    }
}

// Softmax of one score row in double precision.
void softmax_row(std::span<const float> row, std::vector<double>& out) {
    out.resize(row.size());
    double mx = -INFINITY;
    for (float v : row) mx = std::max(mx, static_cast<double>(v));
    double z = 0;
    for (std::size_t c = 0; c < row.size(); ++c) z += out[c] = std::exp(static_cast<double>(row[c]) - mx);
    for (auto& v : out) v /= z;
}

}  // namespace

std::vector<double> pool_scores(Model<float>& model, const HsiDataset& dataset,
                                std::span<const std::size_t> pixels, Strategy strategy, std::size_t batch) {
    if (strategy == Strategy::Random) throw std::invalid_argument("pool_scores: random acquisition has no model score");
    std::vector<double> scores(pixels.size());
    const std::size_t m = model.spec().patch_size;
    std::vector<double> probs;
    for_each_batch(pixels, batch, [&](std::size_t start, std::span<const std::size_t> chunk) {
        const auto x = gather_patches<float>(dataset, chunk, m);
        if (strategy == Strategy::PredictedLoss) {
            const auto predicted = model.predict_loss(x);
            const auto l = predicted.values();
            for (std::size_t i = 0; i < chunk.size(); ++i) scores[start + i] = l[i];
        } else {
            const auto s = model.classify(x);
            const std::size_t classes = s.shape()[1];
            for (std::size_t i = 0; i < chunk.size(); ++i) {
                softmax_row(s.values().subspan(i * classes, classes), probs);
                scores[start + i] = entropy(probs);
            }
        }
    });
    return scores;
}

std::vector<int> predict_classes(Model<float>& model, const HsiDataset& dataset,
                                 std::span<const std::size_t> pixels, std::size_t batch) {
    std::vector<int> out(pixels.size());
    const std::size_t m = model.spec().patch_size;
    for_each_batch(pixels, batch, [&](std::size_t start, std::span<const std::size_t> chunk) {
        const auto s = model.classify(gather_patches<float>(dataset, chunk, m));
        const std::size_t classes = s.shape()[1];
        const auto v = s.values();
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            const auto row = v.subspan(i * classes, classes);
            out[start + i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        }
    });
    return out;
}

Campaign::Campaign(const HsiDataset& dataset, CampaignConfig config, bool)
    : dataset_(&dataset), config_(std::move(config)) {
    config_.backbone.num_classes = dataset.num_classes();
    config_.backbone.input_bands = dataset.bands;
    config_.validate();
}

Campaign::Campaign(const HsiDataset& dataset, CampaignConfig config) : Campaign(dataset, std::move(config), true) {
    SplitSpec split;
    split.seed = derive_seed(config_.seed, "split", 0);
    split.initial_labeled = config_.initial_labeled;
    split.test_fraction = config_.test_fraction;
    auto splits = make_splits(dataset, split);
    const std::size_t available = splits.labeled.size() + splits.pool.size();
    if (config_.budget() > available)
        throw ConfigError("budget " + std::to_string(config_.budget()) + " (initial_labeled + rounds * query_size) " +
                          "exceeds the " + std::to_string(available) + " labeled pixels outside the test split");
    labeled_ = std::move(splits.labeled);
    pool_ = std::move(splits.pool);
    test_ = std::move(splits.test);
    for (auto p : labeled_) labeled_classes_.push_back(dataset.class_of(p));
    model_ = std::make_unique<Model<float>>(config_.backbone, derive_seed(config_.seed, "init", 0));
}

TrainTrace Campaign::train_round(std::stop_token stop) { return train_round(config_.epochs, stop); }

TrainTrace Campaign::train_round(std::size_t epochs, std::stop_token stop) {
    TrainTrace trace;
    if (epochs == 0 || labeled_.empty()) return trace;
    const std::size_t batch = config_.objective.batch_size;
    if (labeled_.size() < batch)
        throw std::invalid_argument("train_round: " + std::to_string(labeled_.size()) +
                                    " labeled samples cannot fill one batch of " + std::to_string(batch) +
                                    "; lower batch_size");
    if (!config_.fine_tune)
        model_ = std::make_unique<Model<float>>(config_.backbone, derive_seed(config_.seed, "init", round_));
    Adam<float> adam(model_->parameters(), config_.optimizer);
    std::mt19937_64 rng(derive_seed(config_.seed, "shuffle", round_));
    std::vector<std::size_t> order(labeled_.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::size_t> pixels(batch);
    std::vector<std::int32_t> labels(batch);
    const std::size_t batches = labeled_.size() / batch;
    const float xi = static_cast<float>(config_.objective.xi);
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0;
        for (std::size_t b = 0; b < batches; ++b) {
            if (stop.stop_requested()) {
                trace.stopped = true;
                return trace;
            }
            for (std::size_t i = 0; i < batch; ++i) {
                pixels[i] = labeled_[order[b * batch + i]];
                labels[i] = labeled_classes_[order[b * batch + i]];
            }
            const auto x = gather_patches<float>(*dataset_, pixels, config_.backbone.patch_size);
            auto out = model_->forward(x, Mode::Train, true, !config_.ranking_into_backbone);
            auto terms = batch_objective(out.scores, labels, out.predicted_loss, xi);
            adam.zero_grad();
            backward(terms.total);
            adam.step();
            total += terms.total.item();
        }
        trace.epoch_loss.push_back(total / static_cast<double>(batches));
    }
    return trace;
}

MetricsReport Campaign::evaluate(std::span<const std::size_t> pixels) {
    if (pixels.empty()) throw std::invalid_argument("evaluate: empty test set");
    const auto predicted = predict_classes(*model_, *dataset_, pixels, config_.eval_batch);
    std::vector<int> truth(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) truth[i] = dataset_->class_of(pixels[i]);
    return metrics_from_confusion(confusion_matrix(truth, predicted, dataset_->num_classes()));
}

const MetricsReport& Campaign::evaluate_round() {
    if (history_.size() != round_)
        throw std::logic_error("evaluate_round: round " + std::to_string(round_) + " already evaluated");
    history_.push_back(evaluate(test_));
    return history_.back();
}

std::vector<Query> Campaign::acquire(std::size_t k) { return acquire(config_.strategy, k); }

std::vector<Query> Campaign::acquire(Strategy strategy, std::size_t k) {
    if (k > pool_.size())
        throw std::invalid_argument("acquire: k = " + std::to_string(k) + " exceeds the pool size " +
                                    std::to_string(pool_.size()));
    if (k == 0) return {};
    std::vector<double> scores;
    if (strategy == Strategy::Random) {
        std::mt19937_64 rng(derive_seed(config_.seed, "acquire", round_));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        scores.resize(pool_.size());
        for (auto& s : scores) s = u(rng);
    } else {
        scores = pool_scores(*model_, *dataset_, pool_, strategy, config_.eval_batch);
    }
    return rank_top_k(pool_, scores, k);
}

const std::vector<Query>& Campaign::open_query() {
    if (!pending_.empty()) throw std::logic_error("open_query: a query batch is already pending");
    pending_ = acquire(config_.query_size);
    return pending_;
}

void Campaign::validate_labels(std::span<const LabelAssignment> labels) const {
    if (pending_.empty()) throw std::invalid_argument("no query batch is pending");
    std::set<std::size_t> pending;
    for (const auto& q : pending_) pending.insert(q.pixel);
    std::set<std::size_t> seen;
    std::vector<std::string> problems;
    for (const auto& l : labels) {
        if (!pending.contains(l.pixel))
            problems.push_back("sample " + std::to_string(l.pixel) + " is not pending");
        else if (!seen.insert(l.pixel).second)
            problems.push_back("sample " + std::to_string(l.pixel) + " is labeled twice");
        if (l.label < 0 || static_cast<std::size_t>(l.label) >= dataset_->num_classes())
            problems.push_back("sample " + std::to_string(l.pixel) + ": class " + std::to_string(l.label + 1) +
                               " outside 1.." + std::to_string(dataset_->num_classes()));
    }
    if (problems.empty() && seen.size() != pending.size())
        problems.push_back("submission covers " + std::to_string(seen.size()) + " of " +
                           std::to_string(pending.size()) + " pending samples");
    if (!problems.empty()) {
        std::string msg = problems.front();
        for (std::size_t i = 1; i < problems.size(); ++i) msg += "; " + problems[i];
        throw std::invalid_argument(msg);
    }
}

void Campaign::apply_labels(std::span<const LabelAssignment> labels) {
    validate_labels(labels);
    std::unordered_map<std::size_t, int> assigned;
    for (const auto& l : labels) assigned[l.pixel] = l.label;
    // Keep the acquisition order so labeled() is reproducible.
    for (const auto& q : pending_) {
        labeled_.push_back(q.pixel);
        labeled_classes_.push_back(assigned.at(q.pixel));
    }
    std::erase_if(pool_, [&](std::size_t p) { return assigned.contains(p); });
    pending_.clear();
    ++round_;
    check_invariants();
}

std::vector<LabelAssignment> Campaign::simulated_labels() const {
    std::vector<LabelAssignment> out;
    for (const auto& q : pending_) out.push_back({q.pixel, dataset_->class_of(q.pixel)});
    return out;
}

std::vector<std::uint16_t> Campaign::render_map() {
    std::vector<std::size_t> all(dataset_->pixels());
    std::iota(all.begin(), all.end(), 0);
    const auto predicted = predict_classes(*model_, *dataset_, all, config_.eval_batch);
    std::vector<std::uint16_t> raster(all.size());
    for (std::size_t i = 0; i < all.size(); ++i) raster[i] = static_cast<std::uint16_t>(predicted[i] + 1);
    return raster;
}

void Campaign::check_invariants() const {
    const std::size_t expected = config_.initial_labeled + round_ * config_.query_size;
    if (labeled_.size() != expected)
        throw std::logic_error("budget: " + std::to_string(labeled_.size()) + " labeled after round " +
                               std::to_string(round_) + ", expected " + std::to_string(expected));
    if (labeled_classes_.size() != labeled_.size()) throw std::logic_error("labeled classes out of step");
    std::vector<char> owner(dataset_->pixels(), 0);
    auto claim = [&](const std::vector<std::size_t>& set, char tag) {
        for (auto p : set) {
            if (p >= owner.size()) throw std::logic_error("pixel index " + std::to_string(p) + " out of range");
            if (owner[p]) throw std::logic_error("pixel " + std::to_string(p) + " is in two sets");
            owner[p] = tag;
        }
    };
    claim(labeled_, 1);
    claim(pool_, 2);
    claim(test_, 3);
    const auto gt = dataset_->labeled_pixels();
    if (gt.size() != labeled_.size() + pool_.size() + test_.size())
        throw std::logic_error("labeled, pool and test do not cover the ground truth");
    for (auto p : gt)
        if (!owner[p]) throw std::logic_error("ground-truth pixel " + std::to_string(p) + " is in no set");
    for (const auto& q : pending_)
        if (owner[q.pixel] != 2) throw std::logic_error("pending sample outside the pool");
}

void Campaign::save_state(std::ostream& out) const {
    out.write(kStateMagic, 8);
    io::write<std::uint32_t>(out, kStateVersion);
    io::write<std::uint64_t>(out, config_.hash());
    io::write<std::uint64_t>(out, dataset_->pixels());
    io::write<std::uint64_t>(out, round_);
    auto write_ids = [&](const std::vector<std::size_t>& ids) {
        const std::vector<std::uint64_t> v(ids.begin(), ids.end());
        io::write<std::uint64_t>(out, v.size());
        io::write_array(out, v.data(), v.size());
    };
    write_ids(labeled_);
    const std::vector<std::int32_t> classes(labeled_classes_.begin(), labeled_classes_.end());
    io::write_array(out, classes.data(), classes.size());
    write_ids(pool_);
    write_ids(test_);
    io::write<std::uint64_t>(out, pending_.size());
    for (const auto& q : pending_) {
        io::write<std::uint64_t>(out, q.pixel);
        io::write<double>(out, q.score);
    }
    io::write<std::uint64_t>(out, history_.size());
    const std::size_t k = dataset_->num_classes();
    for (const auto& r : history_) {
        std::vector<std::uint64_t> flat;
        for (const auto& row : r.confusion) flat.insert(flat.end(), row.begin(), row.end());
        if (flat.size() != k * k) throw std::logic_error("history confusion has the wrong size");
        io::write_array(out, flat.data(), flat.size());
    }
    save_checkpoint(*model_, out);
    if (!out) throw std::runtime_error("failed writing campaign state");
}

void Campaign::save_state(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
        save_state(out);
        out.flush();
        if (!out) throw std::runtime_error("failed writing " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Campaign Campaign::restore(const HsiDataset& dataset, CampaignConfig config, std::istream& in) {
    Campaign c(dataset, std::move(config), true);
    io::expect_magic(in, kStateMagic);
    const auto version = io::read<std::uint32_t>(in, "state version");
    if (version != kStateVersion)
        throw FormatError("campaign state: unsupported version " + std::to_string(version));
    const auto hash = io::read<std::uint64_t>(in, "config hash");
    if (hash != c.config_.hash())
        throw ConfigError("campaign state was written by a different configuration (hash mismatch)");
    const auto pixels = io::read<std::uint64_t>(in, "pixel count");
    if (pixels != dataset.pixels())
        throw FormatError("campaign state covers " + std::to_string(pixels) + " pixels, dataset has " +
                          std::to_string(dataset.pixels()));
    c.round_ = io::read<std::uint64_t>(in, "round");
    auto read_ids = [&](std::vector<std::size_t>& ids, const char* what) {
        const auto n = io::read<std::uint64_t>(in, what);
        if (n > pixels) throw FormatError(std::string("campaign state: ") + what + " larger than the dataset");
        const auto v = io::read_array<std::uint64_t>(in, n, what);
        ids.assign(v.begin(), v.end());
    };
    read_ids(c.labeled_, "labeled set");
    const auto classes = io::read_array<std::int32_t>(in, c.labeled_.size(), "labeled classes");
    c.labeled_classes_.assign(classes.begin(), classes.end());
    read_ids(c.pool_, "pool");
    read_ids(c.test_, "test set");
    const auto pending = io::read<std::uint64_t>(in, "pending count");
    if (pending > pixels) throw FormatError("campaign state: pending batch larger than the dataset");
    for (std::uint64_t i = 0; i < pending; ++i) {
        Query q;
        q.pixel = io::read<std::uint64_t>(in, "pending sample");
        q.score = io::read<double>(in, "pending score");
        c.pending_.push_back(q);
    }
    const auto rounds = io::read<std::uint64_t>(in, "history length");
    if (rounds > c.config_.rounds + 1) throw FormatError("campaign state: history longer than the schedule");
    const std::size_t k = dataset.num_classes();
    for (std::uint64_t r = 0; r < rounds; ++r) {
        const auto flat = io::read_array<std::uint64_t>(in, k * k, "confusion matrix");
        ConfusionMatrix cm(k, std::vector<std::size_t>(k));
        for (std::size_t t = 0; t < k; ++t)
            for (std::size_t p = 0; p < k; ++p) cm[t][p] = flat[t * k + p];
        c.history_.push_back(metrics_from_confusion(cm));
    }
    auto model = load_checkpoint(in);
    if (!(model.spec() == c.config_.backbone))
        throw FormatError("campaign state: checkpoint architecture differs from the configuration");
    c.model_ = std::make_unique<Model<float>>(std::move(model));
    for (std::size_t i = 0; i < c.labeled_.size(); ++i)
        if (c.labeled_classes_[i] < 0 || static_cast<std::size_t>(c.labeled_classes_[i]) >= k)
            throw FormatError("campaign state: labeled class out of range");
    try {
        c.check_invariants();
    } catch (const std::logic_error& e) {
        throw FormatError(std::string("campaign state is inconsistent: ") + e.what());
    }
    return c;
}

Campaign Campaign::restore(const HsiDataset& dataset, CampaignConfig config, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open campaign state: " + path);
    return restore(dataset, std::move(config), in);
}

std::string metrics_csv(const std::vector<MetricsReport>& history, std::size_t initial_labeled,
                        std::size_t query_size) {
    std::string out = "round,labeled_count,OA,AA,kappa";
    const std::size_t classes = history.empty() ? 0 : history.front().per_class.size();
    for (std::size_t c = 0; c < classes; ++c) out += ",acc_" + std::to_string(c + 1);
    out += '\n';
    for (std::size_t r = 0; r < history.size(); ++r) {
        const auto& m = history[r];
        out += std::to_string(r) + ',' + std::to_string(initial_labeled + r * query_size) + ',' +
               fmt_double(m.overall_accuracy) + ',' + fmt_double(m.average_accuracy) + ',' + fmt_double(m.kappa);
        for (double a : m.per_class) out += ',' + fmt_double(a);
        out += '\n';
    }
    return out;
}

std::string map_png(const HsiDataset& dataset, std::span<const std::uint16_t> raster) {
    if (dataset.num_classes() > 255) throw std::invalid_argument("map_png: more than 255 classes");
    std::vector<Rgb> palette{{0, 0, 0}};
    palette.insert(palette.end(), dataset.palette.begin(), dataset.palette.end());
    std::vector<std::uint8_t> indices(raster.size());
    for (std::size_t i = 0; i < raster.size(); ++i) {
        if (raster[i] > dataset.num_classes()) throw std::invalid_argument("map_png: class index outside palette");
        indices[i] = static_cast<std::uint8_t>(raster[i]);
    }
    return encode_paletted_png(dataset.width, dataset.height, indices, palette);
}

void CampaignMonitor::publish(CampaignSnapshot snapshot) {
    std::lock_guard lock(mutex_);
    snapshot_ = std::move(snapshot);
}

void CampaignMonitor::update(const std::function<void(CampaignSnapshot&)>& edit) {
    std::lock_guard lock(mutex_);
    if (!snapshot_) snapshot_.emplace();
    edit(*snapshot_);
}

CampaignSnapshot CampaignMonitor::snapshot() const {
    std::lock_guard lock(mutex_);
    if (!snapshot_) throw std::logic_error("no campaign snapshot published");
    return *snapshot_;
}

bool CampaignMonitor::has_snapshot() const {
    std::lock_guard lock(mutex_);
    return snapshot_.has_value();
}

CampaignSnapshot make_snapshot(const Campaign& campaign, CampaignPhase phase) {
    CampaignSnapshot s;
    s.phase = phase;
    s.round = campaign.round();
    s.rounds = campaign.config().rounds;
    s.labeled = campaign.labeled().size();
    s.pool = campaign.pool().size();
    s.test = campaign.test().size();
    s.initial_labeled = campaign.config().initial_labeled;
    s.query_size = campaign.config().query_size;
    s.pending = campaign.pending();
    s.history = campaign.history();
    return s;
}

std::optional<std::vector<LabelAssignment>> SimulatedOracle::request(const Campaign& campaign, std::stop_token stop) {
    if (stop.stop_requested()) return std::nullopt;
    return campaign.simulated_labels();
}

CampaignResult run_campaign(const HsiDataset& dataset, const CampaignConfig& config, LabelOracle& oracle,
                            const RunOptions& options) {
    namespace fs = std::filesystem;
    CampaignResult result;
    const bool resumable = !options.state_path.empty();
    std::optional<Campaign> campaign;
    if (resumable && fs::exists(options.state_path)) {
        campaign.emplace(Campaign::restore(dataset, config, options.state_path.string()));
        log_line(options, "resumed at round " + std::to_string(campaign->round()));
    } else {
        campaign.emplace(dataset, config);
    }
    auto& c = *campaign;
    std::vector<std::uint16_t> map;
    auto publish = [&](CampaignPhase phase) {
        if (!options.monitor) return;
        auto snap = make_snapshot(c, phase);
        snap.map = map;
        options.monitor->publish(std::move(snap));
    };
    auto persist = [&] {
        if (resumable) c.save_state(options.state_path.string());
    };
    try {
        publish(CampaignPhase::Training);
        for (;;) {
            if (c.history().size() <= c.round()) {
                const auto trace = c.train_round(options.stop);
                if (trace.stopped) {
                    result.stopped = true;
                    break;
                }
                const auto& m = c.evaluate_round();
                log_line(options, "round " + std::to_string(c.round()) + ": labeled " +
                                      std::to_string(c.labeled().size()) + ", OA " + fmt_double(m.overall_accuracy) +
                                      ", AA " + fmt_double(m.average_accuracy) + ", kappa " + fmt_double(m.kappa));
                if (options.render_each_round && c.round() >= 1) map = c.render_map();
            }
            if (c.round() >= c.config().rounds) break;
            if (c.pending().empty()) {
                c.open_query();
                persist();
            }
            publish(CampaignPhase::AwaitingLabels);
            auto labels = oracle.request(c, options.stop);
            if (!labels) {
                result.stopped = true;
                break;
            }
            c.apply_labels(*labels);
            persist();
            publish(CampaignPhase::Training);
            oracle.applied(c);
        }
    } catch (const std::exception& e) {
        if (options.monitor)
            options.monitor->update([&](CampaignSnapshot& s) {
                s.phase = CampaignPhase::Failed;
                s.error = e.what();
            });
        throw;
    }
    result.history = c.history();
    result.labeled = c.labeled().size();
    if (result.stopped) {
        persist();
        publish(CampaignPhase::Training);
        return result;
    }
    if (!options.out_dir.empty()) {
        fs::create_directories(options.out_dir);
        const auto csv = options.out_dir / "metrics.csv";
        write_file(csv.string(), metrics_csv(c.history(), c.config().initial_labeled, c.config().query_size));
        result.artifacts.push_back(csv);
        if (map.empty() || !options.render_each_round || c.round() == 0) map = c.render_map();
        const auto raw = options.out_dir / "map.u16";
        std::string bytes(map.size() * 2, '\0');
        for (std::size_t i = 0; i < map.size(); ++i) {
            bytes[2 * i] = static_cast<char>(map[i] & 0xff);
            bytes[2 * i + 1] = static_cast<char>(map[i] >> 8);
        }
        write_file(raw.string(), bytes);
        result.artifacts.push_back(raw);
        const auto png = options.out_dir / "map.png";
        write_file(png.string(), map_png(dataset, map));
        result.artifacts.push_back(png);
        const auto ckpt = options.out_dir / "model.ckpt";
        save_checkpoint(c.model(), ckpt.string());
        result.artifacts.push_back(ckpt);
    }
    persist();
    publish(CampaignPhase::Finished);
    return result;
}

}  // namespace densal
