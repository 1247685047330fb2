#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "promptforge/embedder.hpp"
#include "promptforge/io.hpp"
#include "promptforge/segmenter.hpp"

namespace promptforge {

inline constexpr int kBridgeProtocol = 1;
inline constexpr int kBridgeLogitSize = 256;
inline constexpr int kBridgePromptSpace = 1024;

struct BridgeOptions {
    std::string url;  // e.g. http://127.0.0.1:8765
    double timeout_s = 30.0;
    int max_in_flight = 4;
    int retries = 3;
    double backoff_ms = 250.0;
    /// Receives one line per retry; stderr when unset.
    std::function<void(const std::string&)> log;
};

namespace detail {

using bjson = nlohmann::json;

inline void require_finite(const std::vector<double>& v, const std::string& field) {
    for (double x : v)
        if (!std::isfinite(x)) throw ProtocolError(field, "non-finite value");
}

inline bjson point_list(const std::vector<PixelPoint>& pts, const std::string& field) {
    bjson a = bjson::array();
    for (const auto& p : pts) {
        if (p.x < 0 || p.y < 0 || p.x >= kBridgePromptSpace || p.y >= kBridgePromptSpace)
            throw ProtocolError(field, "coordinate outside [0,1024)");
        a.push_back({p.x, p.y});
    }
    return a;
}

inline const bjson& field(const bjson& obj, const std::string& key, const std::string& path) {
    if (!obj.is_object() || !obj.contains(key)) throw ProtocolError(path, "missing");
    return obj.at(key);
}

inline std::vector<double> number_array(const bjson& j, std::size_t expected, const std::string& path) {
    if (!j.is_array()) throw ProtocolError(path, "expected an array");
    if (j.size() != expected)
        throw ProtocolError(path, "expected " + std::to_string(expected) + " values, got " + std::to_string(j.size()));
    std::vector<double> v;
    v.reserve(expected);
    for (const auto& x : j) {
        if (!x.is_number()) throw ProtocolError(path, "non-numeric element");
        v.push_back(x.get<double>());
    }
    require_finite(v, path);
    return v;
}

inline int positive_int(const bjson& j, const std::string& path) {
    if (!j.is_number_integer() || j.get<long long>() < 1 || j.get<long long>() > (1 << 20))
        throw ProtocolError(path, "expected a positive integer");
    return j.get<int>();
}

}  // namespace detail

/// HTTP client for the bridge service. Safe to share between threads; concurrent calls are capped
/// at `max_in_flight` across all endpoints.
class BridgeClient {
public:
    explicit BridgeClient(BridgeOptions opts) : opts_(std::move(opts)), slots_(std::max(1, opts_.max_in_flight)) {
        if (opts_.url.empty()) throw InvalidArgument("bridge URL is not configured");
        if (opts_.retries < 0) throw InvalidArgument("bridge retries must be >= 0");
        if (!make_client().is_valid()) throw InvalidArgument("unsupported bridge URL: " + opts_.url);
    }

    const BridgeOptions& options() const { return opts_; }

    /// Number of retries performed so far (all endpoints).
    int retries_performed() const { return retried_.load(); }

    void health() {
        const auto body = call("GET", "/health", "");
        const auto& ok = detail::field(body, "ok", "ok");
        if (!ok.is_boolean() || !ok.get<bool>()) throw ProtocolError("ok", "service reports not ok");
        check_protocol(body);
    }

    static std::string embed_request(const ImageGrid& image) {
        detail::require_finite(image.values, "image");
        detail::bjson j;
        j["protocol"] = kBridgeProtocol;
        j["image"] = base64_encode(encode_png_gray(image));
        j["height"] = image.height;
        j["width"] = image.width;
        return j.dump();
    }

    /// Canonical body: keys sorted, numbers in shortest round-trip form.
    static std::string segment_request(const ImageGrid& image, const PromptBundle& b, bool multimask) {
        if (b.prompt_space != kBridgePromptSpace) throw ProtocolError("points", "prompt space must be 1024");
        if (b.workspace != kBridgeLogitSize) throw ProtocolError("mask_logits", "workspace must be 256");
        detail::require_finite(image.values, "image");
        detail::bjson j;
        j["protocol"] = kBridgeProtocol;
        j["image"] = base64_encode(encode_png_gray(image));
        j["height"] = image.height;
        j["width"] = image.width;
        j["points"] = {{"pos", detail::point_list(b.positives, "points.pos")},
                       {"neg", detail::point_list(b.negatives, "points.neg")}};
        detail::point_list({{b.box.x_min, b.box.y_min}, {b.box.x_max, b.box.y_max}}, "box");
        if (b.box.x_min > b.box.x_max || b.box.y_min > b.box.y_max) throw ProtocolError("box", "inverted");
        j["box"] = {b.box.x_min, b.box.y_min, b.box.x_max, b.box.y_max};
        if (b.mask_logits.size() != std::size_t(kBridgeLogitSize) * kBridgeLogitSize)
            throw ProtocolError("mask_logits", "expected 256x256 values");
        detail::require_finite(b.mask_logits, "mask_logits");
        j["mask_logits"] = b.mask_logits;
        if (b.prototype.values.empty()) {
            j["prototype"] = nullptr;
        } else {
            detail::require_finite(b.prototype.values, "prototype");
            j["prototype"] = b.prototype.values;
        }
        j["multimask"] = multimask;
        return j.dump();
    }

    FeatureMap embed(const ImageGrid& image) {
        const auto body = call("POST", "/embed", embed_request(image));
        FeatureMap f;
        f.height = detail::positive_int(detail::field(body, "h", "h"), "h");
        f.width = detail::positive_int(detail::field(body, "w", "w"), "w");
        f.channels = detail::positive_int(detail::field(body, "c", "c"), "c");
        f.values = detail::number_array(detail::field(body, "features", "features"),
                                        std::size_t(f.height) * f.width * f.channels, "features");
        f.scale = double(image.height) / f.height;
        return f;
    }

    SegmentationOutput segment(const ImageGrid& image, const PromptBundle& b, bool multimask) {
        const auto body = call("POST", "/segment", segment_request(image, b, multimask));
        const auto& masks = detail::field(body, "masks", "masks");
        if (!masks.is_array() || masks.empty()) throw ProtocolError("masks", "expected a non-empty array");
        SegmentationOutput out;
        out.size = b.prompt_space;
        out.multimask = multimask;
        for (std::size_t k = 0; k < masks.size(); ++k) {
            const std::string path = "masks[" + std::to_string(k) + "]";
            const auto low = detail::number_array(detail::field(masks[k], "logits_256", path + ".logits_256"),
                                                  std::size_t(kBridgeLogitSize) * kBridgeLogitSize, path + ".logits_256");
            const auto& score = detail::field(masks[k], "score", path + ".score");
            if (!score.is_number() || !std::isfinite(score.get<double>()))
                throw ProtocolError(path + ".score", "expected a finite number");
            out.masks.push_back({resize_bilinear(low, kBridgeLogitSize, kBridgeLogitSize, out.size, out.size),
                                 score.get<double>()});
        }
        return out;
    }

private:
    httplib::Client make_client() const {
        httplib::Client c(opts_.url);
        const auto t = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::duration<double>(opts_.timeout_s));
        c.set_connection_timeout(t);
        c.set_read_timeout(t);
        c.set_write_timeout(t);
        return c;
    }

    static void check_protocol(const detail::bjson& body) {
        if (!body.contains("protocol")) return;
        const auto& p = body.at("protocol");
        if (!p.is_number_integer() || p.get<int>() != kBridgeProtocol)
            throw ProtocolError("protocol", "unsupported protocol version");
    }

    void log(const std::string& line) const {
        if (opts_.log) opts_.log(line);
        else std::cerr << line << '\n';
    }

    // One HTTP exchange with retries. Exhausted retries surface as a non-retryable BackendError so callers
    // do not stack another retry loop on top.
    detail::bjson call(const std::string& method, const std::string& path, const std::string& body) {
        std::string last;
        for (int attempt = 1;; ++attempt) {
            bool retryable = true;
            {
                slots_.acquire();
                struct Release {
                    std::counting_semaphore<>& s;
                    ~Release() { s.release(); }
                } release{slots_};
                auto client = make_client();
                const auto res = method == "GET" ? client.Get(path) : client.Post(path, body, "application/json");
                if (!res) {
                    last = path + ": " + httplib::to_string(res.error());
                } else if (res->status == 200) {
                    detail::bjson j;
                    try {
                        j = detail::bjson::parse(res->body);
                    } catch (const std::exception& e) {
                        throw ProtocolError("body", std::string("invalid JSON: ") + e.what());
                    }
                    if (!j.is_object()) throw ProtocolError("body", "expected a JSON object");
                    if (path != "/health") check_protocol(j);
                    return j;
                } else {
                    last = path + ": HTTP " + std::to_string(res->status);
                    retryable = res->status == 429 || res->status >= 500;
                    const auto err = detail::bjson::parse(res->body, nullptr, false);
                    if (err.is_object()) {
                        if (err.contains("error") && err["error"].is_string()) last += " " + err["error"].get<std::string>();
                        if (err.contains("retryable") && err["retryable"].is_boolean()) retryable = err["retryable"].get<bool>();
                    }
                }
            }
            if (!retryable) throw BackendError(last, false, attempt);
            if (attempt > opts_.retries) throw BackendError(last + " (retries exhausted)", false, attempt);
            const double ms = opts_.backoff_ms * double(1 << (attempt - 1));
            log("bridge: " + last + "; retry " + std::to_string(attempt) + "/" + std::to_string(opts_.retries) +
                " in " + std::to_string(int(ms)) + " ms");
            ++retried_;
            std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
        }
    }

    BridgeOptions opts_;
    std::counting_semaphore<> slots_;
    std::atomic<int> retried_{0};
};

class RemoteEmbedder : public Embedder {
public:
    explicit RemoteEmbedder(BridgeClient& client) : client_(client) {}
    FeatureMap embed(const ImageGrid& image) override { return client_.embed(image); }
    std::string name() const override { return "remote"; }

private:
    BridgeClient& client_;
};

class RemoteSegmenter : public Segmenter {
public:
    explicit RemoteSegmenter(BridgeClient& client) : client_(client) {}
    SegmentationOutput segment(const ImageGrid& image, const PromptBundle& bundle, bool multimask) override {
        return client_.segment(image, bundle, multimask);
    }
    std::string name() const override { return "remote"; }

private:
    BridgeClient& client_;
};

}  // namespace promptforge
