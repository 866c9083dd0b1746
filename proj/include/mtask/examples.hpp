#pragma once

// Example programs from the tutorial, written with the builder library.
// Every function returns a validated program.

#include "mtask/lang.hpp"

#include <string>
#include <utility>
#include <vector>

namespace mtask::examples {

Program validated(Program p);

// rpeat (writeD d2 True >>| delay 500 >>| writeD d2 False >>| delay 500)
Program blink(Pin led = dpin(2), int half_period = 500);

// the recursive blink rendered by the pretty printer
Program recursive_blink(int ms = 1000);

// delay first, then write, then recurse with the negated state
Program functional_blink(Pin led = dpin(2), int ms = 500);

struct Blinker {
    Pin pin;
    int period;
};

// one blink function per pin, all started under .||.
Program blink_thread(const std::vector<Blinker>& blinkers = {{dpin(1), 500}, {dpin(2), 300}, {dpin(3), 800}});

// classify readA A2 into four bins, limits 64/128/192/256
Program read_pin_bin(Pin pin = apin(2));

// blink whose interval is read from a lifted SDS bound to `key`
Program blink_interactive(const std::string& key = "interval", int initial = 500, Pin led = dpin(2));

// lifted SDS mirrored onto a pin
Program light_switch(const std::string& key = "light", Pin led = dpin(13));

// temperature .&&. humidity
Program temp_simple();

// writes changed temperatures to a lifted SDS
Program temp_sds(const std::string& temp_key = "temperature");

// monitor .||. heater; the heater pin follows temp < target / temp > target
Program thermostat(const std::string& temp_key = "temperature", const std::string& target_key = "target",
                   Pin heater = dpin(4));

const std::vector<std::pair<int, int>>& fourtytwo();

Program matrix_toggle(int x, int y, bool on);
Program matrix_clear();
// LMClear >>| dot .. >>| dot >>| LMDisplay, one task
Program matrix42();

struct PlotterKeys {
    std::string limits = "limits";
    std::string delay = "granularity";
    std::string temp = "temperature";
    std::string alarm = "alarm";
};

Program plotter(const PlotterKeys& keys = {}, Pin led = dpin(3), Pin button = dpin(4));

Program sum(int x, int y);
Program factorial(int n);
// accumulator version, tail recursive
Program factorial_acc(int n);

} // namespace mtask::examples
