#include "cxrflow/message.hpp"

#include "cxrflow/error.hpp"

namespace cxrflow {

const char* role_name(Role role) {
    switch (role) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

Role role_from_name(const std::string& name) {
    if (name == "system") return Role::system;
    if (name == "user") return Role::user;
    if (name == "assistant") return Role::assistant;
    throw EngineError(ErrorCode::Corrupt, "unknown message role: " + name);
}

void to_json(nlohmann::json& j, const ImageRef& ref) {
    j = nlohmann::json{{"id", ref.id}, {"location", ref.location}, {"media_type", ref.media_type}};
}

void from_json(const nlohmann::json& j, ImageRef& ref) {
    j.at("id").get_to(ref.id);
    j.at("location").get_to(ref.location);
    ref.media_type = j.value("media_type", std::string("image/png"));
}

} // namespace cxrflow
