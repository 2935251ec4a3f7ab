#pragma once

// Pool-based active-learning campaign: train on the labeled set, score the
// pool, query the top-ranked samples, label them, retrain.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stop_token>
#include <string>
#include <vector>

#include "densal/hsi.hpp"
#include "densal/losses.hpp"
#include "densal/metrics.hpp"
#include "densal/network.hpp"
#include "densal/optim.hpp"

namespace densal {

enum class Strategy { PredictedLoss, MaxEntropy, Random };
enum class OracleMode { Simulated, Human };

std::string_view strategy_name(Strategy s);
// Throws ConfigError naming the valid strategies.
Strategy parse_strategy(const std::string& name);
std::string_view oracle_name(OracleMode m);
OracleMode parse_oracle(const std::string& name);

struct CampaignConfig {
    std::string preset = "tiny";
    // num_classes and input_bands are taken from the dataset.
    BackboneSpec backbone = BackboneSpec::tiny(2, 1);
    TrainObjectiveConfig objective{1.0, 4};
    AdamParameters optimizer{};
    std::size_t epochs = 30;
    std::size_t initial_labeled = 16;
    std::size_t query_size = 4;
    std::size_t rounds = 8;
    double test_fraction = 0.2;
    Strategy strategy = Strategy::PredictedLoss;
    OracleMode oracle = OracleMode::Simulated;
    std::uint64_t seed = 0;
    // Continue from the previous round's weights instead of re-initializing.
    bool fine_tune = false;
    // When false the ranking loss trains only the loss head.
    bool ranking_into_backbone = true;
    std::size_t eval_batch = 64;

    // Full-scale schedule: densenet121, B=10, 200 epochs, 160 initial, 10 per round, 32 rounds.
    static CampaignConfig paper_defaults();

    std::size_t budget() const { return initial_labeled + rounds * query_size; }
    void validate() const;
    // Stable key = value rendering; also the input of hash().
    std::string canonical() const;
    std::uint64_t hash() const;
};

std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose, std::uint64_t index);

struct LabelAssignment {
    std::size_t pixel = 0;
    int label = 0;  // zero-based class
};

struct Query {
    std::size_t pixel = 0;
    double score = 0;
};

// Top k by score descending, ties by ascending id. ids and scores align.
std::vector<Query> rank_top_k(std::span<const std::size_t> ids, std::span<const double> scores, std::size_t k);

// -sum p log p of a probability row.
double entropy(std::span<const double> probabilities);

// Patches for the given pixels as one [N,b,m,m] tensor.
template <typename T>
Tensor<T> gather_patches(const HsiDataset& dataset, std::span<const std::size_t> pixels, std::size_t m);

// Infer-mode scores for every pixel, batched; rows align with pixels.
std::vector<double> pool_scores(Model<float>& model, const HsiDataset& dataset,
                                std::span<const std::size_t> pixels, Strategy strategy, std::size_t batch);
std::vector<int> predict_classes(Model<float>& model, const HsiDataset& dataset,
                                 std::span<const std::size_t> pixels, std::size_t batch);

struct TrainTrace {
    std::vector<double> epoch_loss;  // mean batch objective per epoch
    bool stopped = false;
};

enum class CampaignPhase { Training, AwaitingLabels, Finished, Failed };
std::string_view phase_name(CampaignPhase p);

class Campaign {
  public:
    // Splits the dataset and initializes the model. The dataset must outlive
    // the campaign and is expected to be normalized.
    Campaign(const HsiDataset& dataset, CampaignConfig config);

    // Restores a persisted state; throws if the config hash differs.
    static Campaign restore(const HsiDataset& dataset, CampaignConfig config, std::istream& state);
    static Campaign restore(const HsiDataset& dataset, CampaignConfig config, const std::string& path);

    const CampaignConfig& config() const { return config_; }
    const HsiDataset& dataset() const { return *dataset_; }
    std::size_t round() const { return round_; }
    const std::vector<std::size_t>& labeled() const { return labeled_; }
    // Class assigned to labeled()[i].
    const std::vector<int>& labeled_classes() const { return labeled_classes_; }
    const std::vector<std::size_t>& pool() const { return pool_; }
    const std::vector<std::size_t>& test() const { return test_; }
    const std::vector<Query>& pending() const { return pending_; }
    const std::vector<MetricsReport>& history() const { return history_; }
    Model<float>& model() { return *model_; }
    const Model<float>& model() const { return *model_; }

    // Fresh (or fine-tuned) training on the labeled set. Throws when
    // 0 < |labeled| < batch size. An empty labeled set leaves the model as is.
    TrainTrace train_round(std::stop_token stop = {});
    TrainTrace train_round(std::size_t epochs, std::stop_token stop = {});
    MetricsReport evaluate(std::span<const std::size_t> pixels);
    // Evaluates the test split and appends the report to history().
    const MetricsReport& evaluate_round();
    // Top-k pool samples for the configured strategy.
    std::vector<Query> acquire(std::size_t k);
    std::vector<Query> acquire(Strategy strategy, std::size_t k);
    // acquire(query_size) stored as the pending batch.
    const std::vector<Query>& open_query();
    // Throws std::invalid_argument without changing state when any entry is
    // invalid. In human mode every pending sample must be covered exactly.
    void validate_labels(std::span<const LabelAssignment> labels) const;
    // Moves the samples from pool to labeled and advances the round.
    void apply_labels(std::span<const LabelAssignment> labels);
    // Ground-truth labels for the pending batch.
    std::vector<LabelAssignment> simulated_labels() const;

    // One-based class raster over every pixel, labeled or not.
    std::vector<std::uint16_t> render_map();

    void save_state(std::ostream& out) const;
    void save_state(const std::string& path) const;

    // Partition invariant plus budget bookkeeping; throws std::logic_error.
    void check_invariants() const;

  private:
    Campaign(const HsiDataset& dataset, CampaignConfig config, bool skip_init);

    const HsiDataset* dataset_;
    CampaignConfig config_;
    std::unique_ptr<Model<float>> model_;
    std::vector<std::size_t> labeled_;
    std::vector<int> labeled_classes_;
    std::vector<std::size_t> pool_;
    std::vector<std::size_t> test_;
    std::vector<Query> pending_;
    std::vector<MetricsReport> history_;
    std::size_t round_ = 0;
};

// Writes the per-round CSV: round, labeled_count, OA, AA, kappa, acc_1..acc_C.
std::string metrics_csv(const std::vector<MetricsReport>& history, std::size_t initial_labeled,
                        std::size_t query_size);

std::string map_png(const HsiDataset& dataset, std::span<const std::uint16_t> raster);

// Consistent view of a running campaign for observers such as the label
// service.
struct CampaignSnapshot {
    CampaignPhase phase = CampaignPhase::Training;
    std::size_t round = 0;
    std::size_t rounds = 0;
    std::size_t labeled = 0;
    std::size_t pool = 0;
    std::size_t test = 0;
    std::size_t initial_labeled = 0;
    std::size_t query_size = 0;
    std::vector<Query> pending;
    std::vector<MetricsReport> history;
    std::vector<std::uint16_t> map;  // empty until available
    std::string error;
};

class CampaignMonitor {
  public:
    void publish(CampaignSnapshot snapshot);
    void update(const std::function<void(CampaignSnapshot&)>& edit);
    CampaignSnapshot snapshot() const;
    bool has_snapshot() const;

  private:
    mutable std::mutex mutex_;
    std::optional<CampaignSnapshot> snapshot_;
};

CampaignSnapshot make_snapshot(const Campaign& campaign, CampaignPhase phase);

// Source of labels for a pending batch.
class LabelOracle {
  public:
    virtual ~LabelOracle() = default;
    // Returns labels for campaign.pending(), or nullopt when stopped.
    virtual std::optional<std::vector<LabelAssignment>> request(const Campaign& campaign,
                                                                std::stop_token stop) = 0;
    // Called after the labels returned by request() were applied.
    virtual void applied(const Campaign&) {}
};

class SimulatedOracle final : public LabelOracle {
  public:
    std::optional<std::vector<LabelAssignment>> request(const Campaign& campaign, std::stop_token stop) override;
};

struct RunOptions {
    std::filesystem::path out_dir;    // CSV, map and checkpoint land here when set
    std::filesystem::path state_path; // persisted after every completed round when set
    bool render_each_round = false;
    CampaignMonitor* monitor = nullptr;
    std::stop_token stop;
    std::function<void(const std::string&)> log;
};

struct CampaignResult {
    std::vector<MetricsReport> history;
    std::size_t labeled = 0;
    bool stopped = false;
    std::vector<std::filesystem::path> artifacts;
};

// init (or resume) -> R x {train, evaluate, acquire, label} -> train, evaluate.
// Resumes from options.state_path when that file exists.
CampaignResult run_campaign(const HsiDataset& dataset, const CampaignConfig& config, LabelOracle& oracle,
                            const RunOptions& options = {});

}  // namespace densal
