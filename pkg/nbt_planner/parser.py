import logging
from typing import Any, Dict, List, Optional, Tuple

from ply import lex, yacc

from nbt_planner.utils import NBTPlannerException

logger = logging.getLogger("nbt_planner")

ASSIGN = "assign"
BLOCK = "block"


class ConfigParserError(NBTPlannerException):
    pass


class Parser:
    """
    Base class for a lexer/parser that has the rules defined as methods

        It could not be loaded or called without Subclass,

        for example: ConfigParser

        Subclass must include tokens for parser and rules

    This class contains logic for content pre-processing before passing it to lex&yacc parser
    and for folding parsed items into nested dicts:

        - line endings and tabs clean up
        - repeated blocks collected into lists
        - duplicated keys (last one wins)
    """

    start = "config"

    def __init__(self, content: str, source: Optional[str] = None) -> None:
        """
        content: is a config file content for processing
        source: file name used in error messages
        """
        self.data = content
        self.source = source or "<string>"
        self.lexer = lex.lex(object=self, debug=False)
        # tables are small, never write parsetab modules next to the package
        self.yacc = yacc.yacc(
            module=self, debug=False, write_tables=False, errorlog=yacc.NullLogger()
        )

    def pre_process_data(self, data: str) -> str:
        return data.replace("\r\n", "\n").replace("\r", "\n").replace("\t", " ")

    def collect_items(self, items: List[Tuple[str, str, Any]]) -> Dict:
        """fold parsed (kind, key, value) items of one scope into a dict"""
        result: Dict = {}
        blocks_seen = set()
        for kind, key, value in items:
            if kind == BLOCK:
                if key in result and key not in blocks_seen:
                    self.raise_error(f"'{key}' is used both as a value and as a block")
                if key in blocks_seen:
                    if not isinstance(result[key], list):
                        result[key] = [result[key]]
                    result[key].append(value)
                else:
                    result[key] = value
                    blocks_seen.add(key)
            else:
                if key in blocks_seen:
                    self.raise_error(f"'{key}' is used both as a block and as a value")
                if key in result:
                    logger.debug(f"{self.source}: '{key}' redefined, last value wins")
                result[key] = value
        return result

    def raise_error(self, message: str) -> None:
        raise ConfigParserError(f"{self.source}: {message}")

    def run(self) -> Dict:
        """parsed config as a nested dict"""
        self.lexer.lineno = 1
        data = self.pre_process_data(self.data)
        if not data.strip():
            return {}
        result = self.yacc.parse(data, lexer=self.lexer)
        return result or {}
