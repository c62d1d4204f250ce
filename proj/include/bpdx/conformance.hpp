#pragma once

#include <string>
#include <vector>

namespace bpdx {

/// Golden wire data for clients written against the dispatch protocol in
/// other languages. Everything here is deterministic, so regenerating the
/// corpus must reproduce the checked-in files byte for byte.
struct CorpusFile {
    std::string name;
    std::string content;
};

/// dispatch-session.script.json  client operations (connect/subscribe/call)
/// dispatch-session.jsonl        {"dir":"c2s"|"s2c","line":...} as seen by the node
/// envelopes.jsonl               {"envelope":{...},"line":...} canonical encodings
/// decode-errors.jsonl           {"line":...,"error":code} lines a decoder must reject
/// frames.jsonl                  {"bundle":{...},"frame-hex":...} CLA frames
std::vector<CorpusFile> generate_conformance_corpus();

void write_conformance_corpus(const std::string& dir);

}  // namespace bpdx
