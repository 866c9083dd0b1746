#include "mtask/server/apps.hpp"

#include "mtask/examples.hpp"

#include <cmath>
#include <functional>
#include <map>

namespace mtask::server::apps {

namespace ex = mtask::examples;

Json tenths_to_degrees(const Json& t) { return t.get<double>() / 10.0; }

Json degrees_to_tenths(const Json& d) { return static_cast<std::int32_t>(std::lround(d.get<double>() * 10.0)); }

namespace {

UpdateAs in_degrees()
{
    return {tenths_to_degrees, [](const Json&, const Json& d) { return degrees_to_tenths(d); }, Schema::real()};
}

ViewAs degrees_view() { return {tenths_to_degrees, Schema::real()}; }

} // namespace

Task blink(DeviceRef dev) { return lift_mtask(ex::blink(), dev); }

Task blink_thread(DeviceRef dev) { return lift_mtask(ex::blink_thread(), dev); }

Task blink_interactive(DeviceRef dev)
{
    return with_shared(
        500,
        [dev](SdsRef interval) {
            return par_left(lift_mtask(ex::blink_interactive("interval"), dev, {{"interval", interval}}),
                            update_shared("Interval", interval));
        },
        Schema::integer());
}

Task temp_simple(DeviceRef dev)
{
    auto lens = [](const Json& m) {
        if (m.empty()) return Json::array({0.0, 0.0});
        return Json::array({m[0][0].get<double>() / 10.0, m[0][1].get<double>() / 10.0});
    };
    return feed(lift_mtask(ex::temp_simple(), dev), [lens](SdsRef th) {
        return view_shared("Temperature and humidity", th, {lens, Schema::pair(Schema::real(), Schema::real())});
    });
}

Task temp_sds(DeviceRef dev)
{
    return with_shared(
        0,
        [dev](SdsRef temp) {
            return par_left(lift_mtask(ex::temp_sds("temperature"), dev, {{"temperature", temp}}),
                            view_shared("Temperature", temp, degrees_view()));
        },
        Schema::integer());
}

Task thermostat(DeviceRef dev)
{
    return with_shared(
        0,
        [dev](SdsRef temp) {
            return with_shared(
                250,
                [dev, temp](SdsRef target) {
                    return par_left(par_left(lift_mtask(ex::thermostat("temperature", "target"), dev,
                                                        {{"temperature", temp}, {"target", target}}),
                                             view_shared("Temperature", temp, degrees_view())),
                                    update_shared("Target", target, in_degrees()));
                },
                Schema::integer());
        },
        Schema::integer());
}

Task i_task42(DeviceRef dev)
{
    std::vector<Task> toggles;
    for (auto [x, y] : ex::fourtytwo()) toggles.push_back(lift_mtask(ex::matrix_toggle(x, y, true), dev));
    return const_value(bind_stable(lift_mtask(ex::matrix_clear(), dev),
                                   [toggles](const Json&) { return sequence(toggles); }),
                       nullptr);
}

Task matrix(DeviceRef dev)
{
    Schema ledstatus = Schema::record({{"x", Schema::integer()}, {"y", Schema::integer()}, {"status", Schema::boolean()}});
    Task toggle = bind(enter("Led", ledstatus), [dev](const Json& s) {
        return lift_mtask(ex::matrix_toggle(s["x"].get<int>(), s["y"].get<int>(), s["status"].get<bool>()), dev);
    });
    return const_value(sidestep(view_device(dev), {on_action("Toggle", always(toggle)),
                                                   on_action("Clear", always(lift_mtask(ex::matrix_clear(), dev))),
                                                   on_action("42", always(i_task42(dev))),
                                                   on_action("42mtask", always(lift_mtask(ex::matrix42(), dev)))}),
                       nullptr);
}

Task plotter(DeviceRef dev)
{
    using Body = std::function<Task(SdsRef)>;
    return with_shared(
        Json::array({220, 250}),
        Body([dev](SdsRef limits) {
            return with_shared(
                1000,
                Body([dev, limits](SdsRef wait) {
                    return with_shared(
                        0,
                        Body([dev, limits, wait](SdsRef temp) {
                            return with_shared(
                                250,
                                Body([dev, limits, wait, temp](SdsRef alarm) {
                                    ex::PlotterKeys keys;
                                    Task device = lift_mtask(ex::plotter(keys), dev,
                                                             {{keys.limits, limits},
                                                              {keys.delay, wait},
                                                              {keys.temp, temp},
                                                              {keys.alarm, alarm}});
                                    Task ui = par_left(update_shared("Graph Min/Max (C, C)", limits),
                                                       par_left(update_shared("Granularity (ms)", wait),
                                                                par_left(view_shared("Temperature (C)", temp, degrees_view()),
                                                                         update_shared("Alarm (C)", alarm, in_degrees()))));
                                    return par_left(device, ui);
                                }),
                                Schema::integer());
                        }),
                        Schema::integer());
                }),
                Schema::integer());
        }),
        Schema::pair(Schema::integer(), Schema::integer()));
}

const std::vector<std::string>& names()
{
    static const std::vector<std::string> n = {"blink",  "blinkThread", "blinkInteractive", "tempSimple",
                                               "tempSds", "thermostat",  "matrix",           "plotter"};
    return n;
}

Task make(const std::string& name, DeviceRef dev)
{
    static const std::map<std::string, Task (*)(DeviceRef)> table = {
        {"blink", blink},       {"blinkThread", blink_thread}, {"blinkInteractive", blink_interactive},
        {"tempSimple", temp_simple}, {"tempSds", temp_sds},   {"thermostat", thermostat},
        {"matrix", matrix},     {"plotter", plotter},
    };
    auto it = table.find(name);
    if (it == table.end()) throw UnknownApp("unknown app '" + name + "'");
    return it->second(dev);
}

} // namespace mtask::server::apps
