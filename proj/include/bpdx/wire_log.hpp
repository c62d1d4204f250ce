#pragma once

#include <fstream>
#include <string>
#include <string_view>

#include <json.hpp>

#include "bpdx/bundle.hpp"

namespace bpdx {

/// Append-only JSON-lines record of everything a node sends or receives on
/// its dispatch and application channels, every published event, and every
/// convergence-layer transfer. Each record carries "t" (ms), "ch" and "dir".
///
///   ch=dispatch|app  dir=in|out  conn, line   (raw protocol line)
///   ch=bus           dir=pub     event        (event document)
///   ch=cla           dir=tx|rx   peer, id, payload-length
///   ch=link          dir=up|down peer, address
class WireLog {
public:
    WireLog() = default;
    explicit WireLog(const std::string& path);

    bool enabled() const noexcept { return out_.is_open(); }
    void record(Instant t, std::string_view channel, std::string_view dir, nlohmann::json fields);

private:
    std::ofstream out_;
};

}  // namespace bpdx
