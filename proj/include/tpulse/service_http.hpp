#pragma once

#include <httplib.h>

#include <string>

#include "tpulse/service.hpp"

namespace tpulse {

/// Routes every request on srv through svc.handle. The console runs on a
/// different origin, so responses carry CORS headers and preflights succeed.
inline void mount_service(httplib::Server& srv, Service& svc, const std::string& allow_origin = "*") {
    auto cors = [allow_origin](httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", allow_origin);
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
    };
    auto handler = [&svc, cors](const httplib::Request& req, httplib::Response& res) {
        ServiceRequest r{req.method, req.path, {}, req.body};
        for (const auto& [k, v] : req.params) r.query.emplace(k, v);  // first value wins
        auto out = svc.handle(r);
        res.status = out.status;
        res.set_content(out.body, out.content_type);
        cors(res);
    };
    srv.Get(".*", handler);
    srv.Post(".*", handler);
    srv.Options(".*", [cors](const httplib::Request&, httplib::Response& res) {
        res.status = 204;
        cors(res);
    });
}

}  // namespace tpulse
