#pragma once

// The tutorial applications as server tasks: the device function given to
// with_device, ready to be spawned against a connected device.

#include "mtask/server/engine.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace mtask::server::apps {

class UnknownApp : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

Task blink(DeviceRef dev);
Task blink_thread(DeviceRef dev);
// interval SDS (ms) edited by the user, read by the device
Task blink_interactive(DeviceRef dev);
// the (temperature, humidity) pair fed into a view in degrees and percent
Task temp_simple(DeviceRef dev);
Task temp_sds(DeviceRef dev);
// target edited in degrees, stored in tenths
Task thermostat(DeviceRef dev);
// viewDevice with Toggle, Clear, 42 and 42mtask actions
Task matrix(DeviceRef dev);
Task plotter(DeviceRef dev);

// clear, then one toggle task per dot, each shipped after the previous one
// became stable
Task i_task42(DeviceRef dev);

// degrees <-> tenths of degrees
Json tenths_to_degrees(const Json& t);
Json degrees_to_tenths(const Json& d);

const std::vector<std::string>& names();
// throws UnknownApp
Task make(const std::string& name, DeviceRef dev);

} // namespace mtask::server::apps
