// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: gen-corpus, train, plan, outpaint, eval.
//
// Every subcommand computes all of its outputs in memory, then writes each
// file atomically into the --out directory next to a manifest.json; a failure
// before that point leaves no outputs behind.

#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace m3d {

// Returns the process exit status. Diagnostics go to `err` as one line.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Git blob object id: sha1("blob <size>\0" + content), lower-case hex.
std::string git_blob_sha1(std::string_view content);

// "30,15,1" -> {30, 15, 1}
std::vector<std::size_t> parse_levels(const std::string& text);

}  // namespace m3d
