#include "bpdx/wire_log.hpp"

namespace bpdx {

WireLog::WireLog(const std::string& path) : out_(path, std::ios::out | std::ios::trunc) {
    if (!out_) throw Error("bad-config", "cannot open wire log " + path);
}

void WireLog::record(Instant t, std::string_view channel, std::string_view dir, nlohmann::json fields) {
    if (!enabled()) return;
    fields["t"] = t;
    fields["ch"] = channel;
    fields["dir"] = dir;
    out_ << fields.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
    out_.flush();
}

}  // namespace bpdx
