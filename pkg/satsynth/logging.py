from satsynth.utils import inflect_given_cardinality


class ProxyLogger(object):
    """
    This class provides a wrapper for the standard Python logging
    facilities.  Handlers do not store their messages.  Their messages
    flush immediately to whereever they are intended to go.

    ProxyLogger proxies those received messages along, but also stores them,
    so that a trainer or a manifest validator can hand back everything it
    noticed once it is done.  Messages accept %-style arguments like the
    stdlib logger; the stored text is the formatted message.
    """

    def __init__(self, logger):
        self._messages = []
        self.logger = logger

    def get_messages(self):
        return self._messages

    def flush(self):
        """Clear all messages and return them afterwards."""
        messages = self._messages
        self._messages = []
        return messages

    def _record(self, level, msg, args):
        text = msg % args if args else msg
        self._messages.append((level, text))
        return text

    def warning(self, msg, *args):
        self.logger.warning(self._record("WARNING", msg, args))

    def info(self, msg, *args):
        self.logger.info(self._record("INFO", msg, args))

    def error(self, msg, *args):
        self.logger.error(self._record("ERROR", msg, args))

    def debug(self, msg, *args):
        self.logger.debug(self._record("DEBUG", msg, args))

    def messages_at(self, level):
        return [m for et, m in self._messages if et == level]

    def has_errors(self):
        return any(et == 'ERROR' for et, _ in self._messages)

    def has_warnings(self):
        return any(et == 'WARNING' for et, _ in self._messages)

    def summary(self):
        """One line such as '2 errors, 1 warning'."""
        errors = len(self.messages_at('ERROR'))
        warnings = len(self.messages_at('WARNING'))
        return '%d %s, %d %s' % (
            errors, inflect_given_cardinality('errors', errors),
            warnings, inflect_given_cardinality('warnings', warnings))
