#include <cstdio>

int main() {
    std::puts("synbt: command-line interface not wired up yet");
    return 2;
}
