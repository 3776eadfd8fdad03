#include <string>
#include <vector>

#include "spankt/cli.hpp"

int main(int argc, char** argv) {
    return spankt::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
