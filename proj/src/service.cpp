#include "densal/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <json.hpp>
#include <stdexcept>

#include "densal/image.hpp"

namespace densal {

using nlohmann::json;

SubmitOutcome HumanOracle::submit(std::vector<LabelAssignment> labels, std::size_t round) {
    auto sub = std::make_shared<Submission>();
    sub->labels = std::move(labels);
    sub->round = round;
    auto result = sub->done.get_future();
    {
        std::lock_guard lock(mutex_);
        if (closed_) return {503, "the campaign is shutting down"};
        queue_.push_back(sub);
    }
    cv_.notify_all();
    return result.get();
}

std::optional<std::vector<LabelAssignment>> HumanOracle::request(const Campaign& campaign, std::stop_token stop) {
    std::unique_lock lock(mutex_);
    for (;;) {
        cv_.wait(lock, stop, [&] { return closed_ || !queue_.empty(); });
        if (stop.stop_requested() || closed_) return std::nullopt;
        auto sub = queue_.front();
        queue_.pop_front();
        if (sub->round != campaign.round()) {
            sub->done.set_value({409, "no pending batch for round " + std::to_string(sub->round)});
            continue;
        }
        try {
            campaign.validate_labels(sub->labels);
        } catch (const std::invalid_argument& e) {
            sub->done.set_value({422, e.what()});
            continue;
        }
        accepted_ = sub;
        return sub->labels;
    }
}

void HumanOracle::applied(const Campaign&) {
    std::lock_guard lock(mutex_);
    if (accepted_) {
        accepted_->done.set_value({200, "labels applied"});
        accepted_.reset();
    }
    for (auto& sub : queue_) sub->done.set_value({409, "no pending batch; the submitted batch was already labeled"});
    queue_.clear();
}

void HumanOracle::shutdown() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    if (accepted_) {
        accepted_->done.set_value({503, "the campaign stopped before the labels were applied"});
        accepted_.reset();
    }
    for (auto& sub : queue_) sub->done.set_value({503, "the campaign is shutting down"});
    queue_.clear();
    cv_.notify_all();
}

std::vector<std::uint8_t> context_chip(const HsiDataset& dataset, std::size_t pixel, std::size_t chip) {
    const std::size_t bands[3] = {0, dataset.bands / 2, dataset.bands - 1};
    const auto row = static_cast<std::ptrdiff_t>(pixel / dataset.width);
    const auto col = static_cast<std::ptrdiff_t>(pixel % dataset.width);
    const auto half = static_cast<std::ptrdiff_t>(chip / 2);
    std::vector<std::uint8_t> rgb(chip * chip * 3);
    for (std::size_t y = 0; y < chip; ++y)
        for (std::size_t x = 0; x < chip; ++x) {
            const auto r = reflect_index(row - half + static_cast<std::ptrdiff_t>(y), dataset.height);
            const auto c = reflect_index(col - half + static_cast<std::ptrdiff_t>(x), dataset.width);
            for (int k = 0; k < 3; ++k) {
                const float v = std::clamp(dataset.at(bands[k], r, c), 0.0f, 1.0f);
                rgb[(y * chip + x) * 3 + k] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
            }
        }
    return rgb;
}

std::string base64_encode(const std::string& bytes) {
    static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                           (static_cast<unsigned char>(bytes[i + 1]) << 8) | static_cast<unsigned char>(bytes[i + 2]);
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += kAlphabet[v & 63];
    }
    if (i < bytes.size()) {
        unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
        if (i + 1 < bytes.size()) v |= static_cast<unsigned char>(bytes[i + 1]) << 8;
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

namespace {

json metrics_row(const MetricsReport& m, std::size_t round, std::size_t labeled) {
    json per_class = json::array();
    for (double a : m.per_class) per_class.push_back(std::isnan(a) ? json(nullptr) : json(a));
    return {{"round", round},
            {"labeled_count", labeled},
            {"OA", m.overall_accuracy},
            {"AA", m.average_accuracy},
            {"kappa", m.kappa},
            {"per_class", per_class},
            {"confusion", m.confusion}};
}

json error_body(const std::string& message, const CampaignSnapshot* s = nullptr) {
    json body = {{"error", message}};
    if (s) {
        body["phase"] = phase_name(s->phase);
        body["round"] = s->round;
    }
    return body;
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

}  // namespace

LabelService::LabelService(const HsiDataset& dataset, const CampaignConfig& config, CampaignMonitor& monitor,
                           HumanOracle& oracle, ServiceOptions options)
    : dataset_(dataset),
      config_(config),
      monitor_(monitor),
      oracle_(oracle),
      options_(std::move(options)),
      server_(std::make_unique<httplib::Server>()) {
    if (options_.chip_size == 0) options_.chip_size = config_.backbone.patch_size;
    // The library default adds SO_REUSEPORT, which lets a second server share
    // an occupied port instead of failing.
    server_->set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    install_routes();
}

LabelService::~LabelService() { stop(); }

std::string LabelService::status_json() const {
    if (!monitor_.has_snapshot()) return {};
    const auto s = monitor_.snapshot();
    json classes = json::array();
    for (std::size_t c = 0; c < dataset_.num_classes(); ++c) {
        const auto& rgb = dataset_.palette[c];
        classes.push_back({{"index", c + 1}, {"name", dataset_.class_names[c]}, {"color", {rgb.r, rgb.g, rgb.b}}});
    }
    json body = {{"phase", phase_name(s.phase)},
                 {"round", s.round},
                 {"rounds", s.rounds},
                 {"labeled", s.labeled},
                 {"pool", s.pool},
                 {"test", s.test},
                 {"pending", s.pending.size()},
                 {"initial_labeled", s.initial_labeled},
                 {"query_size", s.query_size},
                 {"budget", s.initial_labeled + s.rounds * s.query_size},
                 {"height", dataset_.height},
                 {"width", dataset_.width},
                 {"bands", dataset_.bands},
                 {"classes", classes},
                 {"map_available", !s.map.empty()},
                 {"latest", nullptr}};
    if (!s.history.empty()) {
        const std::size_t r = s.history.size() - 1;
        body["latest"] = metrics_row(s.history.back(), r, s.initial_labeled + r * s.query_size);
    }
    if (!s.error.empty()) body["error"] = s.error;
    return body.dump();
}

std::string LabelService::metrics_json() const {
    if (!monitor_.has_snapshot()) return {};
    const auto s = monitor_.snapshot();
    json rows = json::array();
    for (std::size_t r = 0; r < s.history.size(); ++r)
        rows.push_back(metrics_row(s.history[r], r, s.initial_labeled + r * s.query_size));
    return json{{"rounds", rows}}.dump();
}

void LabelService::install_routes() {
    auto& srv = *server_;
    srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                             {"Access-Control-Allow-Headers", "Content-Type"},
                             {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    srv.Get("/status", [this](const httplib::Request&, httplib::Response& res) {
        const auto body = status_json();
        if (body.empty()) return send_json(res, 404, error_body("no campaign loaded"));
        res.set_content(body, "application/json");
    });

    srv.Get("/metrics", [this](const httplib::Request&, httplib::Response& res) {
        const auto body = metrics_json();
        if (body.empty()) return send_json(res, 404, error_body("no campaign loaded"));
        res.set_content(body, "application/json");
    });

    srv.Get("/queries", [this](const httplib::Request&, httplib::Response& res) {
        if (!monitor_.has_snapshot()) return send_json(res, 404, error_body("no campaign loaded"));
        const auto s = monitor_.snapshot();
        if (s.phase != CampaignPhase::AwaitingLabels || s.pending.empty())
            return send_json(res, 409, error_body("no pending query batch; the campaign is " +
                                                      std::string(phase_name(s.phase)),
                                                  &s));
        const std::size_t chip = options_.chip_size;
        const std::size_t mid = dataset_.bands / 2;
        json items = json::array();
        for (const auto& q : s.pending) {
            const auto rgb = context_chip(dataset_, q.pixel, chip);
            json chip_json = {{"size", chip},
                              {"bands", {0, mid, dataset_.bands - 1}},
                              {"png", "data:image/png;base64," + base64_encode(encode_rgb_png(chip, chip, rgb))}};
            items.push_back({{"sample_id", q.pixel},
                             {"row", q.pixel / dataset_.width},
                             {"col", q.pixel % dataset_.width},
                             {"spectrum", dataset_.spectrum(q.pixel)},
                             {"chip", chip_json},
                             {"score", q.score},
                             {"round", s.round}});
        }
        send_json(res, 200, {{"round", s.round}, {"strategy", strategy_name(config_.strategy)}, {"items", items}});
    });

    srv.Post("/labels", [this](const httplib::Request& req, httplib::Response& res) {
        if (!monitor_.has_snapshot()) return send_json(res, 404, error_body("no campaign loaded"));
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::parse_error& e) {
            return send_json(res, 400, error_body(std::string("malformed JSON: ") + e.what()));
        }
        const json* list = &body;
        if (body.is_object() && body.contains("labels")) list = &body["labels"];
        if (!list->is_array()) return send_json(res, 400, error_body("expected a list of {sample_id, class}"));

        const auto s = monitor_.snapshot();
        if (s.phase != CampaignPhase::AwaitingLabels || s.pending.empty())
            return send_json(res, 409, error_body("no pending query batch", &s));

        std::vector<LabelAssignment> labels;
        std::vector<std::string> problems;
        for (std::size_t i = 0; i < list->size(); ++i) {
            const auto& item = (*list)[i];
            const std::string at = "entry " + std::to_string(i);
            if (!item.is_object() || !item.contains("sample_id") || !item.contains("class")) {
                problems.push_back(at + ": needs sample_id and class");
                continue;
            }
            const auto& id = item["sample_id"];
            const auto& cls = item["class"];
            if (!id.is_number_unsigned() || !cls.is_number_integer()) {
                problems.push_back(at + ": sample_id and class must be integers");
                continue;
            }
            labels.push_back({id.get<std::size_t>(), static_cast<int>(cls.get<std::int64_t>() - 1)});
        }
        if (!problems.empty()) {
            json err = error_body("invalid submission", &s);
            err["problems"] = problems;
            return send_json(res, 422, err);
        }
        const auto outcome = oracle_.submit(std::move(labels), s.round);
        if (outcome.status != 200) {
            const auto now = monitor_.snapshot();
            return send_json(res, outcome.status, error_body(outcome.message, &now));
        }
        res.status = 200;
        res.set_content(json{{"accepted", true}, {"status", json::parse(status_json())}}.dump(), "application/json");
    });

    srv.Get("/map", [this](const httplib::Request&, httplib::Response& res) {
        if (!monitor_.has_snapshot()) return send_json(res, 404, error_body("no campaign loaded"));
        const auto s = monitor_.snapshot();
        if (s.map.empty()) return send_json(res, 404, error_body("no classification map before the first round", &s));
        res.set_content(map_png(dataset_, s.map), "image/png");
    });
}

int LabelService::start() {
    if (thread_.joinable()) throw std::logic_error("label service already started");
    if (options_.port == 0)
        port_ = server_->bind_to_any_port(options_.host);
    else
        port_ = server_->bind_to_port(options_.host, options_.port) ? options_.port : -1;
    if (port_ <= 0)
        throw std::runtime_error("cannot bind " + options_.host + ":" + std::to_string(options_.port) +
                                 " (address in use?)");
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port_;
}

void LabelService::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace densal
