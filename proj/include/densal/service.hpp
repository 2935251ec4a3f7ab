#pragma once

// JSON-over-HTTP front end for a human-oracle campaign.
//
//   GET  /status    campaign summary
//   GET  /queries   pending batch with display data (409 when none)
//   POST /labels    {"labels": [{"sample_id": n, "class": c}, ...]}, c in 1..C
//   GET  /metrics   per-round metrics series
//   GET  /map       latest classification map as PNG (404 before round 1)

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <future>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "densal/campaign.hpp"

namespace httplib {
class Server;
}

namespace densal {

struct SubmitOutcome {
    int status = 200;  // HTTP status
    std::string message;
};

// Funnels label submissions from request threads into the campaign thread.
// The campaign validates and applies each submission itself, so a batch is
// either applied whole or not at all.
class HumanOracle final : public LabelOracle {
  public:
    // Blocks until the campaign thread accepts or rejects the submission.
    SubmitOutcome submit(std::vector<LabelAssignment> labels, std::size_t round);

    std::optional<std::vector<LabelAssignment>> request(const Campaign& campaign, std::stop_token stop) override;
    void applied(const Campaign& campaign) override;

    // Rejects every waiting submission; later submissions fail immediately.
    void shutdown();

  private:
    struct Submission {
        std::vector<LabelAssignment> labels;
        std::size_t round = 0;
        std::promise<SubmitOutcome> done;
    };

    std::mutex mutex_;
    std::condition_variable_any cv_;
    std::deque<std::shared_ptr<Submission>> queue_;
    std::shared_ptr<Submission> accepted_;
    bool closed_ = false;
};

struct ServiceOptions {
    std::string host = "127.0.0.1";
    int port = 8080;         // 0 picks a free port
    std::size_t chip_size = 0;  // 0 uses the model patch size
};

class LabelService {
  public:
    LabelService(const HsiDataset& dataset, const CampaignConfig& config, CampaignMonitor& monitor,
                 HumanOracle& oracle, ServiceOptions options = {});
    ~LabelService();
    LabelService(const LabelService&) = delete;
    LabelService& operator=(const LabelService&) = delete;

    // Binds and serves on a background thread; returns the bound port.
    // Throws std::runtime_error when the address cannot be bound.
    int start();
    void stop();
    int port() const { return port_; }

    // Response bodies, exposed for in-process use.
    std::string status_json() const;
    std::string metrics_json() const;

  private:
    void install_routes();

    const HsiDataset& dataset_;
    CampaignConfig config_;
    CampaignMonitor& monitor_;
    HumanOracle& oracle_;
    ServiceOptions options_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    int port_ = 0;
};

// First, middle and last band of a chip x chip window as interleaved RGB.
std::vector<std::uint8_t> context_chip(const HsiDataset& dataset, std::size_t pixel, std::size_t chip);

std::string base64_encode(const std::string& bytes);

}  // namespace densal
