#include "mtask/server/loopback.hpp"

#include <stdexcept>

namespace mtask::server {

struct LoopbackDevice::State {
    State(Engine& e, const BoardConfig& board, const VmConfig& vm) : eng(&e), rt(board, vm) {}

    Engine* eng;
    device::DeviceRuntime rt;
    int device = -1;
    std::int64_t now = 0;
    bool open = true;
    bool cycled_now = false;
    std::vector<FrameRecord> log;
    Json last_state;

    wire::Message cross(const wire::Message& m, bool to_device)
    {
        auto bytes = wire::frame_encode(m);
        auto d = wire::frame_decode(bytes);
        if (d.status != wire::DecodeStatus::Ok || d.consumed != bytes.size())
            throw std::logic_error(std::string("loopback: frame does not round-trip: ") + wire::to_string(d.status));
        log.push_back({to_device, now, eng->ticks(), *d.message, std::move(bytes)});
        return *d.message;
    }

    void deliver(const std::vector<wire::Message>& out)
    {
        for (const auto& m : out) eng->submit(DeviceMessage{device, cross(m, false)});
        publish_state();
    }

    void publish_state()
    {
        const auto& bus = rt.bus();
        Json s = {{"analog", bus.analog()},
                  {"digital", bus.digital()},
                  {"temperature", bus.temperature},
                  {"humidity", bus.humidity},
                  {"matrix", bus.matrix.displayed}};
        if (s != last_state) {
            last_state = s;
            eng->submit(DeviceState{device, s});
        }
    }
};

class LoopbackDevice::Link : public DeviceLink {
public:
    explicit Link(std::shared_ptr<State> st) : st_(std::move(st)) {}

    void send(const wire::Message& m) override
    {
        if (!st_->open) return;
        auto in = st_->cross(m, true);
        st_->deliver(st_->rt.handle(in, st_->now));
    }

    void close() override
    {
        if (!st_->open) return;
        st_->open = false;
        st_->rt.reset();
    }

private:
    std::shared_ptr<State> st_;
};

LoopbackDevice::LoopbackDevice(Engine& eng, const BoardConfig& board, const VmConfig& vm, std::string name)
    : st_(std::make_shared<State>(eng, board, vm))
{
    auto hello = st_->cross(st_->rt.hello(), false);
    st_->device = eng.add_device(std::make_unique<Link>(st_), std::get<wire::Hello>(hello).spec, std::move(name));
    st_->publish_state();
}

LoopbackDevice::~LoopbackDevice() { st_->open = false; }

int LoopbackDevice::id() const { return st_->device; }
device::DeviceRuntime& LoopbackDevice::runtime() { return st_->rt; }
std::int64_t LoopbackDevice::now() const { return st_->now; }
bool LoopbackDevice::connected() const { return st_->open; }

void LoopbackDevice::cycle()
{
    if (!st_->open) return;
    st_->cycled_now = true;
    st_->deliver(st_->rt.cycle(st_->now));
}

void LoopbackDevice::advance(std::int64_t dt, bool pump)
{
    if (dt < 0) throw std::invalid_argument("advance: negative duration");
    auto step = [&] {
        cycle();
        if (pump) st_->eng->run();
    };
    if (!st_->cycled_now) step();
    for (std::int64_t i = 0; i < dt; ++i) {
        ++st_->now;
        st_->cycled_now = false;
        step();
    }
}

void LoopbackDevice::set_input(device::Input input, int index, std::int32_t value)
{
    device::apply_input(st_->rt.bus(), input, index, value);
    st_->publish_state();
}

void LoopbackDevice::disconnect(const std::string& reason)
{
    if (!st_->open) return;
    st_->open = false;
    st_->rt.reset();
    st_->eng->submit(DeviceClosed{st_->device, reason});
}

const std::vector<FrameRecord>& LoopbackDevice::frames() const { return st_->log; }

std::size_t LoopbackDevice::count(wire::Tag tag, bool to_device) const
{
    std::size_t n = 0;
    for (const auto& f : st_->log)
        if (f.to_device == to_device && wire::tag_of(f.message) == tag) ++n;
    return n;
}

void LoopbackDevice::clear_frames() { st_->log.clear(); }

} // namespace mtask::server
