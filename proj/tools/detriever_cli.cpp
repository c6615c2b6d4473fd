#include <string>
#include <vector>

#include "detriever/cli.hpp"

int main(int argc, char** argv) {
    return detriever::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
