from typing import Any, Dict

from ply.lex import LexToken

from nbt_planner import tokens as tok
from nbt_planner.grammar import Blocks, Values
from nbt_planner.parser import ConfigParserError, Parser

VALUE_KEY = "__value__"


class ConfigParser(Parser, Blocks, Values):
    """parser of the structured-text config language used by scenario, robot and bench files"""

    tokens = tok.tokens
    t_ignore = " \t\r"
    t_ignore_COMMENT = r"\#[^\n]*"

    def t_newline(self, t: LexToken) -> None:
        r"\n+"
        t.lexer.lineno += len(t.value)

    def t_NUMBER(self, t: LexToken) -> LexToken:
        r"[-+]?(\d+\.\d*|\.\d+|\d+)([eE][-+]?\d+)?(?![A-Za-z_])"
        if any(symbol in t.value for symbol in ".eE"):
            t.value = float(t.value)
        else:
            t.value = int(t.value)
        return t

    def t_DQ_STRING(self, t: LexToken) -> LexToken:
        r"\"([^\"\\\n]|\\.)*\""
        t.value = t.value[1:-1].replace('\\"', '"').replace("\\\\", "\\")
        return t

    def t_ID(self, t: LexToken) -> LexToken:
        r"[A-Za-z_][A-Za-z0-9_.\-/]*"
        t.type = tok.reserved_values.get(t.value.upper(), "ID")
        return t

    def t_SYMBOL(self, t: LexToken) -> LexToken:
        r"[{}\[\]=,]"
        t.type = tok.symbol_tokens[t.value]
        return t

    def t_error(self, t: LexToken):
        raise ConfigParserError(
            f"{self.source}: unknown symbol {t.value[0]!r} at line {t.lexer.lineno}"
        )

    def p_error(self, p):
        if p is None:
            raise ConfigParserError(f"{self.source}: unexpected end of input")
        raise ConfigParserError(
            f"{self.source}: unexpected {p.value!r} at line {p.lineno}"
        )


def parse_from_file(file_path: str, encoding: str = "utf-8") -> Dict:
    """get nested dict from config file"""
    with open(file_path, "r", encoding=encoding) as config_file:
        return ConfigParser(config_file.read(), source=file_path).run()


def parse_value(text: str) -> Any:
    """parse a single value written in config syntax, e.g. '25', '[1, 2]', 'true'"""
    result = ConfigParser(f"{VALUE_KEY} = {text}", source="<override>").run()
    if set(result) != {VALUE_KEY}:
        raise ConfigParserError(f"<override>: cannot parse value {text!r}")
    return result[VALUE_KEY]
