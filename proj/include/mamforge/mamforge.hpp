#pragma once

#include "mamforge/calculator.hpp"
#include "mamforge/chemomech.hpp"
#include "mamforge/config.hpp"
#include "mamforge/cyclesim.hpp"
#include "mamforge/electrostatics.hpp"
#include "mamforge/potential.hpp"
#include "mamforge/training.hpp"
#include "mamforge/xyz.hpp"
