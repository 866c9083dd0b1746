#pragma once

// An in-process device attached to an engine. Every message crosses the
// real frame codec in both directions and is recorded in a frame log.

#include "mtask/device.hpp"
#include "mtask/server/engine.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace mtask::server {

struct FrameRecord {
    bool to_device = false;
    std::int64_t time = 0;   // device clock
    std::uint64_t tick = 0;  // engine tick when the frame was sent
    wire::Message message;
    std::vector<std::uint8_t> bytes;
};

class LoopbackDevice {
public:
    explicit LoopbackDevice(Engine& eng, const BoardConfig& board = {}, const VmConfig& vm = {},
                            std::string name = "loopback");
    ~LoopbackDevice();

    LoopbackDevice(const LoopbackDevice&) = delete;
    LoopbackDevice& operator=(const LoopbackDevice&) = delete;

    int id() const;
    DeviceRef ref() const { return {id()}; }
    device::DeviceRuntime& runtime();
    std::int64_t now() const;
    bool connected() const;

    // one device cycle at the current time; replies are queued on the engine
    void cycle();
    // like the simulator's virtual clock: a cycle at the current time if none
    // ran there yet, then one per millisecond; with pump the engine drains
    // its queue after every cycle
    void advance(std::int64_t dt, bool pump = true);
    void set_input(device::Input input, int index, std::int32_t value);
    // the connection drops without a DelTask
    void disconnect(const std::string& reason = "connection lost");

    const std::vector<FrameRecord>& frames() const;
    std::size_t count(wire::Tag tag, bool to_device) const;
    void clear_frames();

private:
    struct State;
    class Link;
    std::shared_ptr<State> st_;
};

} // namespace mtask::server
