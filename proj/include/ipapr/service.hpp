#pragma once

#include "ipapr/checkpoint.hpp"
#include "ipapr/editing.hpp"

#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace httplib {
class Server;
}

namespace ipapr {

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

/// Linear render of one output ("color" or "albedo") encoded as 8-bit PNG.
std::vector<std::uint8_t> render_png(const PointScene<float>& scene, const AttentionView<float>& attention,
                                     const DecoderView<float>& decoders, const Camera& camera, const std::string& output,
                                     double log_eps);

/// HTTP editing and rendering service. Each loaded checkpoint becomes a root
/// version; edits add versions and never modify existing ones.
class Service {
public:
    struct Response {
        int status = 200;
        Json body;
    };

    explicit Service(std::vector<Checkpoint> checkpoints);

    /// Transport-independent dispatch used by the HTTP layer and by tests.
    Response handle(const std::string& method, const std::string& path, const std::string& body) const;

    void install(httplib::Server& server) const;

    const VersionTree& versions() const { return tree_; }
    std::uint64_t root(std::size_t checkpoint) const { return roots_.at(checkpoint); }
    std::string checkpoint_hash(std::size_t checkpoint) const { return hashes_.at(checkpoint); }

private:
    struct Context {
        Checkpoint checkpoint;
        std::uint64_t root = 0;
    };

    const Context& context_of(std::uint64_t version) const;
    Camera camera_from_request(const Json& req, const Context& ctx) const;

    Response healthz() const;
    Response list_versions() const;
    Response render(const Json& req) const;
    Response pick(const Json& req) const;
    Response select(const Json& req) const;
    Response edit(const Json& req) const;
    Response version_log(std::uint64_t id) const;

    std::vector<std::unique_ptr<Context>> contexts_;
    std::vector<std::uint64_t> roots_;
    std::vector<std::string> hashes_;
    mutable VersionTree tree_;
    mutable std::mutex edit_mutex_;
};

/// "host:port"; empty falls back to $IPAPR_BIND, then 127.0.0.1:8080.
std::pair<std::string, int> parse_bind(const std::string& bind);

/// Blocks until the server stops.
void serve(const Service& service, const std::string& bind);

}  // namespace ipapr
