"""Instruction codes shared by the tape recorder and both kernel backends."""

CONST = 0
NEG = 1
ADD = 2
SUB = 3
MUL = 4
DIV = 5
EXP = 6
LOG = 7
SIN = 8
COS = 9
POWC = 10  # x ** c, exponent stored in the constant column
POW = 11  # x ** y

NAMES = {
    CONST: "const",
    NEG: "neg",
    ADD: "add",
    SUB: "sub",
    MUL: "mul",
    DIV: "div",
    EXP: "exp",
    LOG: "log",
    SIN: "sin",
    COS: "cos",
    POWC: "powc",
    POW: "pow",
}

UNARY = frozenset({NEG, EXP, LOG, SIN, COS, POWC})
