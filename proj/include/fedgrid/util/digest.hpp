#pragma once

#include <string>
#include <string_view>

namespace fedgrid::util {

std::string sha1_hex(std::string_view bytes);
// Digest git assigns to a blob with this content: sha1("blob <len>\0" + bytes).
std::string git_blob_digest(std::string_view bytes);
std::string git_blob_digest_of_file(const std::string& path);

}  // namespace fedgrid::util
