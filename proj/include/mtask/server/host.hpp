#pragma once

// Runs an engine behind an HTTP/WebSocket API, talks to devices over TCP
// and optionally starts a simulator next to it.
//
//   GET  /api/devices                 POST /api/devices {host, port[, controlPort] | preset}
//   DELETE /api/devices/{id}          POST /api/devices/{id}/input {input, pin, value}
//   GET  /api/presets                 GET  /api/apps
//   GET  /api/tasks                   POST /api/tasks {app, device}      DELETE /api/tasks/{id}
//   POST /api/editor/{path} {value}   POST /api/action/{path} {action}
//   GET  /api/sds                     POST /api/sds/{key} {value}
//   GET  /api/state                   WS   /ws (full state, then one delta per tick)

#include "mtask/device.hpp"
#include "mtask/server/engine.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtask::server {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DevicePreset {
    std::string name;
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;
    std::optional<std::uint16_t> control_port;
};

struct HostConfig {
    std::string bind = "127.0.0.1";
    std::uint16_t port = 8080;  // 0 picks a free port
    std::string static_dir;
    std::chrono::milliseconds handshake_timeout{2000};
    // ping after this much silence, offline after three times as much
    std::chrono::milliseconds keepalive{10000};
    // snapshot polling over the control port, 0 disables
    std::chrono::milliseconds state_poll{250};
    std::vector<DevicePreset> presets;

    struct Simulator {
        bool autostart = false;
        std::uint16_t port = 0;
        std::uint16_t control_port = 0;
        std::size_t arena = 4096;
        device::ClockMode clock = device::ClockMode::Realtime;
        std::chrono::milliseconds cycle{1};
    } simulator;
};

// INI: [server], [simulator] and one [device:<name>] section per preset.
// Throws ConfigError.
HostConfig parse_config(const std::string& text);
HostConfig load_config(const std::string& path);

class Host {
public:
    explicit Host(HostConfig cfg);
    ~Host();

    Host(const Host&) = delete;
    Host& operator=(const Host&) = delete;

    // Binds the API port, starts the simulator when configured and waits
    // until it is connected. Throws on bind or connect failure.
    void start();
    void stop();

    std::uint16_t port() const;
    device::Simulator* simulator();

    // runs f on the engine thread and waits for it
    void with_engine(const std::function<void(Engine&)>& f);

    struct Impl;

private:
    std::shared_ptr<Impl> impl_;
};

} // namespace mtask::server
