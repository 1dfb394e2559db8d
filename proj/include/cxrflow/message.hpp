#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace cxrflow {

enum class Role { system, user, assistant };

const char* role_name(Role role);
Role role_from_name(const std::string& name);

// A reference to an image the model should see. `location` is either a URL
// (http/https/data) or a local file path; HTTP transport resolves file paths
// to base64 data URIs at request-build time.
struct ImageRef {
    std::string id;
    std::string location;
    std::string media_type = "image/png";

    bool operator==(const ImageRef&) const = default;
};

struct ChatMessage {
    Role role = Role::user;
    std::string content;
    std::vector<ImageRef> attachments;

    bool operator==(const ChatMessage&) const = default;
};

void to_json(nlohmann::json& j, const ImageRef& ref);
void from_json(const nlohmann::json& j, ImageRef& ref);

} // namespace cxrflow
