#pragma once
// Scripted in-process stand-in for the bridge service.

#include <atomic>
#include <mutex>
#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "promptforge/io.hpp"

namespace stub {

using json = nlohmann::json;

enum class Mode { Echo, ShortLogits, Flaky, Fatal, Garbage, Slow };

/// Echo mode returns the request's mask logits as every candidate, so the output equals the mask prompt.
class BridgeStub {
public:
    BridgeStub() {
        svr_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
            ++requests;
            res.set_content(json{{"ok", true}, {"protocol", 1}, {"model", "stub"}}.dump(), "application/json");
        });
        svr_.Post("/embed", [this](const httplib::Request& req, httplib::Response& res) {
            ++requests;
            const auto j = json::parse(req.body);
            const auto img = promptforge::decode_png_gray(promptforge::base64_decode(j["image"].get<std::string>()));
            const int s = 4, h = img.height / s, w = img.width / s;
            std::vector<double> f;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    double m = 0;
                    for (int dy = 0; dy < s; ++dy)
                        for (int dx = 0; dx < s; ++dx) m += img.at(x * s + dx, y * s + dy);
                    f.push_back(m / (s * s) - 0.4);
                    f.push_back(0.1);
                }
            res.set_content(json{{"protocol", 1}, {"h", h}, {"w", w}, {"c", 2}, {"features", f}}.dump(), "application/json");
        });
        svr_.Post("/segment", [this](const httplib::Request& req, httplib::Response& res) { segment(req, res); });
        port = svr_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { svr_.listen_after_bind(); });
        svr_.wait_until_ready();
    }
    ~BridgeStub() {
        svr_.stop();
        thread_.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
    std::string last_body() {
        std::lock_guard lock(mu_);
        return last_body_;
    }

    int port = 0;
    std::atomic<Mode> mode{Mode::Echo};
    std::atomic<int> failures_left{0};
    std::atomic<int> requests{0};
    std::atomic<int> in_flight{0};
    std::atomic<int> peak_in_flight{0};

private:
    void segment(const httplib::Request& req, httplib::Response& res) {
        ++requests;
        const int now = ++in_flight;
        for (int p = peak_in_flight.load(); now > p && !peak_in_flight.compare_exchange_weak(p, now);) {
        }
        {
            std::lock_guard lock(mu_);
            last_body_ = req.body;
        }
        respond(req, res);
        --in_flight;
    }

    void respond(const httplib::Request& req, httplib::Response& res) {
        const Mode m = mode.load();
        if (m == Mode::Flaky && failures_left-- > 0) {
            res.status = 503;
            res.set_content(json{{"error", "busy"}, {"retryable", true}}.dump(), "application/json");
            return;
        }
        if (m == Mode::Fatal) {
            res.status = 400;
            res.set_content(json{{"error", "bad prompt"}, {"retryable", false}}.dump(), "application/json");
            return;
        }
        if (m == Mode::Garbage) {
            res.set_content("not json", "text/plain");
            return;
        }
        if (m == Mode::Slow) std::this_thread::sleep_for(std::chrono::milliseconds(60));
        const auto j = json::parse(req.body);
        auto logits = j["mask_logits"];
        if (m == Mode::ShortLogits) logits.erase(logits.begin());
        json masks = json::array();
        const int n = j["multimask"].get<bool>() ? 3 : 1;
        for (int k = 0; k < n; ++k) masks.push_back({{"logits_256", logits}, {"score", 0.5 + 0.1 * k}});
        res.set_content(json{{"protocol", 1}, {"masks", masks}}.dump(), "application/json");
    }

    httplib::Server svr_;
    std::thread thread_;
    std::mutex mu_;
    std::string last_body_;
};

/// A port nothing listens on: bound without listening, then released.
inline int closed_port() {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    socklen_t len = sizeof addr;
    ::bind(fd, reinterpret_cast<sockaddr*>(&addr), len);
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    ::close(fd);
    return ntohs(addr.sin_port);
}

}  // namespace stub
